import itertools

import numpy as np
import pytest

from miqcqp_heur.convexify import build_approx, lift, perturbed_continuous, select_shifts
from miqcqp_heur.corpus import random_instance
from miqcqp_heur.heuristics import (Budget, HeuristicError, PeerSignal, Propagation, PumpConfig,
                                    Termination, domain_propagate, fixed_point_miqp, flip_round,
                                    kkt_residual, quadratic_range, race_pumps, random_flip,
                                    random_flip_project, relaxing_projection, two_projection)
from miqcqp_heur.heuristics import projection
from miqcqp_heur.heuristics.fixedpoint import continuous_fixed_point
from miqcqp_heur.instance import (ProblemClass, QuadraticRow, SymSparseMatrix, check_feasible,
                                  make_instance, normalize, objective_value)
from miqcqp_heur.solver import InternalBackend, SolveRequest

from . import oracles

CFG = PumpConfig(deterministic=True, subproblem_time_limit_s=5.0)


def one_dim_miqcp():
    """min x  s.t.  x^2 >= 1,  x in [0, 4]. Safe shift -3 turns the row into
    2x^2 - 3 uhat x <= -1, feasible iff uhat >= sqrt(8/9)."""
    return make_instance([[0.0]], [1.0], quad=[([[-1.0]], [0.0], -1.0)], lower=[0], upper=[4],
                         name="oned")


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.5), dict(max_iter=0),
                                    dict(subproblem_time_limit_s=0), dict(shift_rule="other")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PumpConfig(**kw)

    def test_budget(self):
        b = Budget(10.0)
        assert 9.0 < b.remaining <= 10.0 and not b.expired
        assert b.sub(3.0) == 3.0
        assert Budget(1e-9).sub(3.0) == 1e-3


class TestFlipRound:
    def test_integral_point_unchanged(self):
        inst, xp = random_instance(0, ProblemClass.MIBQP, n_bin=5, n_cont=2)
        out = flip_round(inst, xp, np.random.default_rng(0))
        np.testing.assert_array_equal(out, xp)

    def test_single_variable_closed_form(self):
        inst = make_instance([[1.0]], [-2.8], 1.96, lower=[0], upper=[3], integer=[0])
        out = random_flip(inst, CFG, 10.0)
        np.testing.assert_allclose(out.info["relaxation"], [1.4], atol=1e-6)
        assert out.x_star[0] == 1.0
        assert out.objective == pytest.approx(0.16)

    def test_incremental_objective(self):
        """Each flip decision uses the exact objective change."""
        rng = np.random.default_rng(3)
        inst, _ = random_instance(3, ProblemClass.MIBQP, n_bin=6, n_cont=0)
        x0 = rng.uniform(0, 1, size=6)
        out = flip_round(inst, x0, np.random.default_rng(1))
        assert set(np.unique(out)) <= {0.0, 1.0}
        # no single flip of the last decided coordinates is forced worse: compare with brute rounding
        assert objective_value(inst, out) <= max(objective_value(inst, np.array(b, float))
                                                 for b in itertools.product((0, 1), repeat=6))

    def test_beats_nearest_rounding(self):
        wins = 0
        for seed in range(100):
            inst, _ = random_instance(seed, ProblemClass.MIBQP, n_bin=6, n_cont=0)
            out = random_flip(inst, PumpConfig(seed=seed), 10.0)
            naive = oracles.nearest_rounding(inst, out.info["relaxation"])
            wins += out.objective <= oracles.objective(inst, naive) + 1e-9
        assert wins >= 90

    def test_class_checked(self):
        inst, _ = random_instance(0, ProblemClass.MIQP)
        with pytest.raises(HeuristicError):
            random_flip(inst, CFG)


class TestPropagation:
    def test_violated_linear_row(self):
        inst = make_instance(np.zeros((2, 2)), A=[[1.0, 1.0]], b_A=[1.0], lower=[0, 0],
                             upper=[1, 1], integer=[0, 1])
        assert domain_propagate(inst, {0: 1, 1: 1}) is Propagation.INFEASIBLE
        assert domain_propagate(inst, {0: 1, 1: 0}) is Propagation.FEASIBLE
        # x1 <= 0 is implied, after which every row holds
        assert domain_propagate(inst, {0: 1}) is Propagation.FEASIBLE

    def test_undecided(self):
        inst = make_instance(np.zeros((3, 3)), A=[[1.0, 1.0, 1.0]], b_A=[1.0], lower=[0, 0, 0],
                             upper=[1, 1, 1], integer=[0, 1, 2])
        assert domain_propagate(inst, {}) is Propagation.UNKNOWN

    def test_no_constraints(self):
        inst = make_instance(np.eye(2), lower=[0, 0], upper=[1, 1], integer=[0])
        assert domain_propagate(inst, {}) is Propagation.FEASIBLE

    def test_out_of_bounds_fix(self):
        inst = make_instance(np.eye(2), lower=[0, 0], upper=[1, 1], integer=[0])
        with pytest.raises(ValueError):
            domain_propagate(inst, {0: 2})

    def test_quadratic_range_encloses(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(3, 3))
        row = QuadraticRow(SymSparseMatrix.from_dense(M + M.T), rng.normal(size=3), 0.0)
        lo, hi = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 3.0, 2.5])
        rmin, rmax = quadratic_range(row, lo, hi)
        for _ in range(500):
            v = row.value(rng.uniform(lo, hi))
            assert rmin - 1e-12 <= v <= rmax + 1e-12

    def test_sound_on_random_fixes(self):
        """Never Infeasible for an extendable fix; never Feasible for a fix
        without a feasible extension."""
        rng = np.random.default_rng(7)
        checked = 0
        for seed in range(40):
            cls = ProblemClass.MIQCP if seed % 2 else ProblemClass.MIQP
            inst, _ = random_instance(seed, cls, n_bin=3, n_int=2, n_cont=0, int_range=3, m2=2)
            feas = oracles.pure_integer_feasible_points(inst)
            for _ in range(25):
                k = int(rng.integers(0, inst.n + 1))
                idx = rng.choice(inst.n, size=k, replace=False)
                fix = {int(i): float(rng.integers(inst.lower[i], inst.upper[i] + 1)) for i in idx}
                ext = [x for x in feas if all(x[i] == v for i, v in fix.items())]
                st = domain_propagate(inst, fix)
                if ext:
                    assert st is not Propagation.INFEASIBLE
                if st is Propagation.FEASIBLE:
                    assert ext
                checked += 1
        assert checked == 1000


class TestRandomFlipProject:
    def test_cover_constraint(self):
        # relaxation (0.5, 0.5); nearest rounding towards the objective gives (0, 0)
        inst = make_instance(np.eye(2), [-0.6, -0.6], A=[[-1.0, -1.0]], b_A=[-1.0],
                             lower=[0, 0], upper=[1, 1], integer=[0, 1])
        out = random_flip_project(inst, CFG, 10.0)
        feasible = [p for p in itertools.product((0.0, 1.0), repeat=2)
                    if oracles.max_violation(inst, np.array(p)) <= 0]
        assert tuple(out.x_star) in feasible
        assert sum(out.x_star) == 1.0

    def test_integral_relaxation_kept(self):
        inst = make_instance(np.eye(2), [-2.0, 2.0], A=[[1.0, 1.0]], b_A=[3.0], lower=[0, 0],
                             upper=[1, 1], integer=[0, 1])
        out = random_flip_project(inst, CFG, 10.0)
        np.testing.assert_array_equal(out.x_star, [1.0, 0.0])

    def test_corpus_feasible(self):
        for seed in range(20):
            inst, _ = random_instance(seed, ProblemClass.MIQP, n_bin=6, n_int=1, n_cont=1, m2=3)
            out = random_flip_project(inst, PumpConfig(seed=seed), 30.0)
            assert out.found and check_feasible(inst, out.x_star)

    def test_infeasible_instance(self):
        inst = make_instance(np.eye(2), A=[[1.0, 1.0], [-1.0, -1.0]], b_A=[0.5, -1.5],
                             lower=[0, 0], upper=[1, 1], integer=[0, 1])
        with pytest.raises(HeuristicError):
            random_flip_project(inst, CFG, 10.0)


class TestFixedPoint:
    def test_convex_stops_after_two(self):
        inst = make_instance(np.eye(3), [-1.0, 1.0, -3.0], A=[[1.0, 1.0, 1.0]], b_A=[3.0],
                             lower=[0, 0, 0], upper=[1, 1, 3], integer=[0, 1])
        out = fixed_point_miqp(inst, CFG, 30.0)
        assert out.iterations == 2 and out.terminated_by is Termination.CONVERGED
        assert len(out.info["objectives"]) == 1

    def test_objectives_strictly_decrease(self):
        for seed in range(5):
            inst, _ = random_instance(seed, ProblemClass.MIQP, n_bin=3, n_cont=2, m2=1)
            out = fixed_point_miqp(inst, CFG, 30.0)
            obj = out.info["objectives"]
            assert all(a - b > CFG.epsilon_improve for a, b in zip(obj, obj[1:]))
            assert check_feasible(inst, out.x_star)

    def test_one_binary_one_continuous_stationary(self):
        # f = -x_c^2 + 3 x_c + x_b x_c - x_b on x_c in [0, 4]
        inst = make_instance([[0.0, 0.5], [0.5, -1.0]], [-1.0, 3.0], A=[[1.0, 0.0]], b_A=[1.0],
                             lower=[0, 0], upper=[1, 4], integer=[0])
        out = fixed_point_miqp(inst, CFG, 30.0)
        x = out.info["fixed_point"].x
        assert x is not None
        g = oracles.fd_gradient(lambda z: oracles.objective(inst, z), x)
        r = oracles.projected_gradient_residual(g[1:], x[1:], inst.lower[1:], inst.upper[1:])
        assert r <= 1e-4
        assert kkt_residual(inst, x) <= 1e-6


    def test_concave_block_converges_to_vertex(self):
        # negative definite continuous block: the interior fixed point repels,
        # the accelerated iteration must still settle on a KKT vertex
        Q = [[1.0, 0.0, 0.0], [0.0, -0.087, -0.044], [0.0, -0.044, -0.133]]
        inst = make_instance(Q, [0.5, -0.164, 0.182], A=[[1.0, 0.0, 0.0]], b_A=[1.0],
                             lower=[0, 0, 0], upper=[1, 4, 4], integer=[0])
        norm = normalize(inst)
        shifts = select_shifts(norm.inst)
        assert perturbed_continuous(norm.inst, shifts)[1:].all()
        fp = continuous_fixed_point(norm, shifts, np.zeros(3), np.array([1.0, 4.0, 4.0]), Budget(30.0))
        assert fp.converged
        assert kkt_residual(inst, fp.x) <= 1e-6
        assert set(np.round(fp.x[1:], 9)) <= {0.0, 4.0}


class TestTwoProjection:
    def test_convex_one_iteration(self):
        inst = make_instance(np.eye(2), [-1.0, -1.0], quad=[(np.eye(2), [0, 0], 2.0)],
                             lower=[0, 0], upper=[2, 2], integer=[0])
        out = two_projection(inst, CFG, 30.0)
        assert out.iterations == 1 and out.found
        assert out.info["doublings"] == 0

    def test_feasible_interval(self):
        inst = one_dim_miqcp()
        out = two_projection(inst, CFG, 30.0)
        assert check_feasible(inst, out.x_star)
        assert out.x_star[0] == pytest.approx(1.0, abs=1e-6)

    def test_single_doubling(self, monkeypatch):
        inst = one_dim_miqcp()
        monkeypatch.setattr(projection._Run, "initial_uhat", lambda self, x0: np.array([0.5]))
        out = two_projection(inst, CFG, 30.0)
        assert out.info["doublings"] == 1 and out.iterations == 2
        assert check_feasible(inst, out.x_star)

    def test_doubling_enlarges_region(self):
        inst = one_dim_miqcp()
        s = select_shifts(inst)
        grid = np.linspace(0, 4, 401)
        for u in (0.2, 0.5, 1.0, 2.0):
            small, large = build_approx(inst, [u], s), build_approx(inst, [min(2 * u, 4.0)], s)
            for x in grid:
                if small.violation(lift(small, [x])) <= 1e-12:
                    assert large.violation(lift(large, [x])) <= 1e-12

    def test_peer_win_after_one_iteration(self, monkeypatch):
        inst = one_dim_miqcp()
        monkeypatch.setattr(projection._Run, "initial_uhat", lambda self, x0: np.array([0.5]))
        peer = PeerSignal()
        peer.announce("relaxing_projection")
        out = two_projection(inst, CFG, 30.0, peer=peer)
        assert out.terminated_by is Termination.PEER_WIN
        assert out.iterations == 1 and not out.found


class TestRelaxingProjection:
    def test_zero_deficiency_first_iteration(self):
        inst = one_dim_miqcp()
        out = relaxing_projection(inst, CFG, 30.0)
        assert out.info["deficiencies"][0] <= 1e-7
        assert out.iterations == 1 and check_feasible(inst, out.x_star)

    def test_corpus_feasible(self):
        found = 0
        for seed in range(20):
            inst, _ = random_instance(seed, ProblemClass.MIQCP, n_bin=4, n_int=1, n_cont=2, m1=2)
            out = relaxing_projection(inst, PumpConfig(seed=seed), 30.0)
            if out.found:
                assert check_feasible(inst, out.x_star)
                found += 1
        assert found >= 16


class TestRace:
    def test_deterministic_winner(self):
        inst, _ = random_instance(2, ProblemClass.MIQCP, n_bin=4, n_cont=2, m1=2)
        winners = {race_pumps(inst, CFG, 30.0).info["winner"] for _ in range(5)}
        assert winners == {"relaxing_projection"}

    def test_returns_better_of_two(self):
        inst, _ = random_instance(5, ProblemClass.MIQCP, n_bin=4, n_cont=2, m1=1)
        out = race_pumps(inst, CFG, 30.0)
        objs = [o.objective for o in out.info["pumps"].values() if o.found]
        assert out.objective == pytest.approx(min(objs))
        assert check_feasible(inst, out.x_star)

    def test_threaded(self):
        inst, _ = random_instance(6, ProblemClass.MIQCP, n_bin=4, n_cont=2, m1=1)
        out = race_pumps(inst, PumpConfig(), 30.0)
        assert out.found and check_feasible(inst, out.x_star)
        assert out.info["winner"] in ("relaxing_projection", "two_projection")

    def test_class_checked(self):
        inst, _ = random_instance(0, ProblemClass.MIQP)
        with pytest.raises(HeuristicError):
            race_pumps(inst, CFG)
