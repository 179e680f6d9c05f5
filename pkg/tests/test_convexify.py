import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from miqcqp_heur.convexify import (ConvexifyError, add_lbc, add_rlbc, binary_expand, build_approx,
                                   build_fpr1, build_fpr2, build_h_linearization, build_l1_projection,
                                   build_relaxation, default_binaries, delta, delta_r, lift,
                                   perturbed_continuous, select_shifts)
from miqcqp_heur.corpus import random_instance
from miqcqp_heur.instance import ProblemClass, make_instance, normalize, objective_value
from miqcqp_heur.model import ModelBuilder, ModelError, original_model

from . import oracles


def normalized(seed, cls=ProblemClass.MIQCP, **kw):
    inst, xp = random_instance(seed, cls, **kw)
    norm = normalize(inst)
    return norm.inst, norm.from_original(xp)


class TestBinaryExpansion:
    @pytest.mark.parametrize("lo,up,bits", [(0, 1, 1), (0, 2, 2), (0, 3, 2), (0, 4, 3), (-3, 4, 3), (2, 10, 4)])
    def test_bit_count(self, lo, up, bits):
        assert binary_expand(0, lo, up).nbits == bits

    def test_encode_decode(self):
        e = binary_expand(0, -2, 5)
        for v in range(-2, 6):
            assert e.decode(e.encode(v)) == v

    def test_errors(self):
        with pytest.raises(ConvexifyError):
            binary_expand(0, 0.5, 3)
        with pytest.raises(ConvexifyError):
            binary_expand(0, 2, 2)
        with pytest.raises(ConvexifyError):
            binary_expand(0, 0, 3).encode(9)


class TestHLinearization:
    @pytest.mark.parametrize("lo,up", [(0, 2), (0, 5), (-3, 4), (1, 8)])
    def test_square_exact_at_lifted_points(self, lo, up):
        b = ModelBuilder()
        x = b.add_var("x", lo, up, "integer", ("x", 0))
        frag = build_h_linearization(b, x, binary_expand(0, lo, up))
        m = b.build()
        for v in range(lo, up + 1):
            z = lift(m, np.array([float(v)]))
            assert m.violation(z) == 0.0
            assert z[frag.X] == v * v

    def test_wrong_square_violates(self):
        b = ModelBuilder()
        x = b.add_var("x", 0, 3, "integer", ("x", 0))
        frag = build_h_linearization(b, x, binary_expand(0, 0, 3))
        m = b.build()
        z = lift(m, np.array([2.0]))
        z[frag.X] += 1.0
        assert m.violation(z) > 0.5


class TestShifts:
    def test_psd_rows_unshifted(self):
        inst = make_instance(np.eye(2), quad=[(-np.eye(2), [0, 0], 1.0), (np.eye(2), [0, 0], 1.0)],
                             lower=[0, 0], upper=[1, 1], integer=[0])
        for rule in ("classic", "safe"):
            s = select_shifts(inst, rule)
            assert s[0] == 0.0 and s[2] == 0.0 and s[1] < 0.0
        assert select_shifts(inst, "classic")[1] == pytest.approx(-1.0)
        # safe: min(2 * -1, -1) - 1 over beta = {1}
        assert select_shifts(inst, "safe")[1] == pytest.approx(-3.0)

    def test_perturbed_continuous(self):
        # index 2 is outside every shifted row's support
        inst = make_instance([[0, 1, 0], [1, 0, 0], [0, 0, 0.0]], [0, 0, 1.0], lower=[0] * 3,
                             upper=[1] * 3, integer=[0])
        s = select_shifts(inst)
        np.testing.assert_array_equal(perturbed_continuous(inst, s), [False, True, False])


class TestApprox:
    def test_is_convex(self):
        for seed in range(5):
            inst, _ = normalized(seed, n_bin=2, n_int=2, m2=1)
            m = build_approx(inst, inst.upper, select_shifts(inst))
            assert m.convex
            for Q in [m.obj_Q] + [q.Q for q in m.quad]:
                assert oracles.min_eig(Q.to_dense()) >= -1e-8

    def test_requires_normalized(self):
        inst, _ = random_instance(0, ProblemClass.MIQCP, n_int=1, shifted_lower=True)
        with pytest.raises(ConvexifyError):
            build_approx(inst, inst.upper, select_shifts(inst))

    def test_uhat_validation(self):
        inst, _ = normalized(1)
        s = select_shifts(inst)
        with pytest.raises(ConvexifyError):
            build_approx(inst, np.zeros(inst.n + 1), s)
        with pytest.raises(ConvexifyError):
            build_approx(inst, -np.ones(inst.n), s, clamp=False)
        with pytest.raises(ConvexifyError):
            build_approx(inst, inst.upper, np.ones(1 + inst.m1))

    @given(st.integers(0, 10_000))
    def test_relaxation_contains_feasible_points(self, seed):
        inst, y = normalized(seed, n_bin=3, n_int=1, m2=1)
        m = build_relaxation(inst, select_shifts(inst))
        z = lift(m, y)
        assert m.violation(z) <= 1e-9
        assert m.objective(z) <= objective_value(inst, y) + 1e-9

    @given(st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_consistency_inequality(self, seed, frac):
        """With uhat_i <= x_i on continuous indices every approximated row
        overestimates the true row."""
        inst, _ = normalized(seed, n_bin=2, n_int=1, m1=2)
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, inst.upper)
        x[inst.integer] = np.round(x[inst.integer])
        uhat = np.where(inst.integer, inst.upper, frac * x)
        m = build_approx(inst, uhat, select_shifts(inst))
        z = lift(m, x)
        for q, row in zip(m.quad, inst.quad_constraints):
            approx = q.Q.quad(z) + q.a @ z
            assert approx >= row.value(x) - 1e-9
        assert m.objective(z) >= objective_value(inst, x) - 1e-9

    @given(st.integers(0, 10_000))
    def test_gradient_matches_at_doubled_point(self, seed):
        """At uhat = 2x the continuous gradient of the approximated objective
        equals the true gradient."""
        inst, _ = normalized(seed, ProblemClass.MIQP, n_bin=2, n_cont=3)
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, inst.upper)
        x[inst.integer] = np.round(x[inst.integer])
        m = build_approx(inst, 2 * x, select_shifts(inst), clamp=False)
        cont = np.flatnonzero(~inst.integer)

        def f_approx(xc):
            y = x.copy()
            y[cont] = xc
            return m.objective(lift(m, y))

        g_model = oracles.fd_gradient(f_approx, x[cont])
        g_true = oracles.gradient(inst, x)[cont]
        np.testing.assert_allclose(g_model, g_true, atol=1e-5)


class TestProjectionModels:
    def test_l1_objective_is_distance(self):
        inst, y = normalized(3, n_bin=3, n_int=1, m2=1)
        region = original_model(inst)
        ref = y + np.where(inst.integer, 0.0, 0.3)
        ref[0] = 1.0 - round(y[0])  # flip one binary
        m = build_l1_projection(region, ref)
        z = lift(m, y)
        assert m.violation(z) <= 1e-9
        assert m.objective(z) == pytest.approx(np.abs(y - ref).sum())

    def test_l1_reference_shape(self):
        region = original_model(normalized(0)[0])
        with pytest.raises(ModelError):
            build_l1_projection(region, np.zeros(region.n + 1))

    def test_fpr2_measures_violation(self):
        inst, y = normalized(4, n_bin=2, m1=2)
        m = build_fpr2(inst)
        x = np.where(inst.integer, y, inst.upper)
        z = lift(m, x)
        excess = sum(max(0.0, r.value(x) - r.b) for r in inst.quad_constraints)
        assert m.violation(z) <= 1e-9
        assert m.objective(z) == pytest.approx(excess)

    def test_fpr1_deficiency(self):
        inst, y = normalized(5, n_bin=2, m1=1)
        s = select_shifts(inst)
        uhat = inst.upper.copy()
        m = build_fpr1(inst, uhat, s)
        z = lift(m, y)
        cont = perturbed_continuous(inst, s)
        assert m.objective(z) == pytest.approx(np.maximum(uhat - y, 0)[cont].sum())

    def test_fpr_need_quadratic_rows(self):
        inst, _ = normalized(0, ProblemClass.MIQP)
        with pytest.raises(ConvexifyError):
            build_fpr2(inst)
        with pytest.raises(ConvexifyError):
            build_fpr1(inst, inst.upper, select_shifts(inst))


class TestLocalBranchingRows:
    def test_distances(self):
        assert delta([1, 0, 1], [1, 1, 0]) == 2
        assert delta_r([1, 0, 1], [1, 1, 0]) == 1

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=30), st.integers(0, 2**30))
    def test_complement_identity(self, xbar, bits):
        x = [(bits >> i) & 1 for i in range(len(xbar))]
        assert delta(x, xbar) + delta_r(x, xbar) == len(xbar)

    def _binary_model(self, n):
        b = ModelBuilder()
        for i in range(n):
            b.add_var(f"x{i}", 0, 1, "binary", ("x", i))
        return b.build()

    def test_lbc_rows_by_enumeration(self):
        m = self._binary_model(5)
        xbar = np.array([1, 0, 1, 1, 0.0])
        B = default_binaries(m)
        for lo, hi in [(0, 2), (1, 3), (2, 5), (4, 4)]:
            mk = add_lbc(m, xbar, lo, hi, B)
            for x in itertools.product((0.0, 1.0), repeat=5):
                inside = mk.violation(np.array(x)) <= 1e-9
                assert inside == (lo <= oracles.hamming(x, xbar) <= hi)

    def test_rlbc_rows_by_enumeration(self):
        m = self._binary_model(5)
        xbar = np.array([0, 0, 1, 1, 0.0])
        for k in range(6):
            mk = add_rlbc(m, xbar, k)
            for x in itertools.product((0.0, 1.0), repeat=5):
                inside = mk.violation(np.array(x)) <= 1e-9
                assert inside == (5 - oracles.hamming(x, xbar) <= k)

    def test_invalid(self):
        m = self._binary_model(3)
        with pytest.raises(ModelError):
            add_lbc(m, [0, 1, 0.5], 1, 2)
        with pytest.raises(ModelError):
            add_lbc(m, [0, 1, 0], 3, 2)
        with pytest.raises(ModelError):
            add_lbc(m, [0, 1], 1, 2)
