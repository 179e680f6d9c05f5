"""Builders for the convex approximations and projection models.

All builders work on a normalized instance (zero lower bounds). For a shift
``lam_k <= 0`` on row ``k`` with support ``S_k`` the approximation replaces

    x'Qk x    by    x'(Qk - lam_k I_S)x + lam_k * sum_{i in S, integer} X_ii
                                        + lam_k * sum_{i in S, continuous} uhat_i x_i

``X_ii`` equals ``x_i`` for binaries and is linearized exactly through a
binary expansion for general integers. With ``uhat = u`` this is a relaxation;
any feasible point with ``x_i >= uhat_i`` on the perturbed continuous indices
is feasible for the original rows.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .instance import MiqcqpInstance, NormalizedInstance, SymSparseMatrix, QuadraticRow
from .model import (ModelBuilder, ModelError, ModelIR, add_linear_rows, add_original_vars,
                    model_is_convex, original_model, _coefs)
from .spectral import extreme_eigenvalues, spectral_info

PSD_TOL = 1e-6


class ShiftRule(str, enum.Enum):
    CLASSIC = "classic"
    SAFE = "safe"


class ConvexifyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# binary expansion and exact square linearization

@dataclass(frozen=True)
class BinaryExpansion:
    source: int
    offset: float
    nbits: int

    @property
    def weights(self) -> np.ndarray:
        return 2.0 ** np.arange(self.nbits)

    @property
    def span(self) -> int:
        return 2 ** self.nbits - 1

    def decode(self, bits) -> float:
        return float(self.offset + self.weights @ np.asarray(bits, dtype=float))

    def encode(self, value: float) -> np.ndarray:
        k = int(round(value - self.offset))
        if not 0 <= k <= self.span:
            raise ConvexifyError(f"value {value} not representable by the expansion")
        return np.array([(k >> h) & 1 for h in range(self.nbits)], dtype=float)


def binary_expand(i: int, lower: float, upper: float) -> BinaryExpansion:
    """Expansion ``x_i = offset + sum_h 2**h t_h`` with ``floor(log2(u-l)) + 1`` bits.

    The range ``2**nbits - 1`` may exceed ``u - l``; the host model keeps
    ``x_i <= u_i``.
    """
    if lower != math.floor(lower) or upper != math.floor(upper):
        raise ConvexifyError("expansion bounds must be integral")
    width = int(upper - lower)
    if width <= 0:
        raise ConvexifyError(f"variable {i} is fixed; substitute the constant instead")
    return BinaryExpansion(i, float(lower), int(math.floor(math.log2(width))) + 1)


@dataclass
class Fragment:
    """Variables and rows added for one expanded integer variable."""

    expansion: BinaryExpansion
    bits: list[int]
    h_vars: dict
    X: int


def build_h_linearization(b: ModelBuilder, x_index: int, exp: BinaryExpansion) -> Fragment:
    """Append bits ``t_h``, products ``H_{h1h2}`` (h1 <= h2) and ``X_ii`` to ``b``.

    Rows: ``x = offset + sum 2**h t_h``; ``H <= t_h1``, ``H <= t_h2``,
    ``H >= t_h1 + t_h2 - 1``; ``X = offset**2 + 2 offset sum 2**h t_h +
    sum_{h1<=h2} w 2**(h1+h2) H`` with ``w = 2`` off the diagonal. At integral
    bits every H is forced to the product, so ``X = x**2`` exactly.
    """
    i, lo, nb = exp.source, exp.offset, exp.nbits
    bits = [b.add_var(f"t_{i}_{h}", 0, 1, "binary", ("bit", i, h, lo)) for h in range(nb)]
    link = {x_index: 1.0}
    for h, t in enumerate(bits):
        link[t] = link.get(t, 0.0) - 2.0 ** h
    b.add_linear(link, "=", lo)
    H = {}
    for h1 in range(nb):
        for h2 in range(h1, nb):
            if h1 == h2:
                H[(h1, h2)] = bits[h1]  # t*t = t
                continue
            v = b.add_var(f"H_{i}_{h1}_{h2}", 0, 1, "binary", ("H", i, h1, h2))
            H[(h1, h2)] = v
            b.add_linear({v: 1.0, bits[h1]: -1.0}, "<=", 0.0)
            b.add_linear({v: 1.0, bits[h2]: -1.0}, "<=", 0.0)
            b.add_linear({v: 1.0, bits[h1]: -1.0, bits[h2]: -1.0}, ">=", -1.0)
    hi = lo + exp.span
    sq_lo = 0.0 if lo < 0 < hi else min(lo * lo, hi * hi)
    X = b.add_var(f"X_{i}", sq_lo, max(lo * lo, hi * hi), "continuous", ("X", i))
    row: dict = {X: 1.0}
    for (h1, h2), v in H.items():
        w = 1.0 if h1 == h2 else 2.0
        row[v] = row.get(v, 0.0) - w * 2.0 ** (h1 + h2)
    for h, t in enumerate(bits):
        row[t] = row.get(t, 0.0) - 2.0 * lo * 2.0 ** h
    b.add_linear(row, "=", lo * lo)
    return Fragment(exp, bits, H, X)


# ---------------------------------------------------------------------------
# shifts

def _rows(inst: MiqcqpInstance) -> list[QuadraticRow]:
    return [inst.objective, *inst.quad_constraints]


def select_shifts(inst: MiqcqpInstance, rule: ShiftRule | str = ShiftRule.SAFE) -> np.ndarray:
    """Shift per row (index 0 is the objective). PSD rows get 0 under both
    rules. The safe rule uses the continuous indices inside each row's support."""
    rule = ShiftRule(rule)
    out = np.zeros(1 + inst.m1)
    for k, row in enumerate(_rows(inst)):
        Q = row.Q
        if Q.nnz == 0:
            continue
        beta = np.intersect1d(Q.support, np.flatnonzero(~inst.integer))
        info = spectral_info(Q, beta)
        if info.lambda_min >= -1e-12:
            continue
        out[k] = info.lambda_classic if rule is ShiftRule.CLASSIC else info.lambda_safe
    return out


def perturbed_support(inst: MiqcqpInstance, shifts) -> np.ndarray:
    """Indices ``i`` with ``sum_k |lam_k| [Q_k touches i] > 0``."""
    mask = np.zeros(inst.n, dtype=bool)
    for lam, row in zip(shifts, _rows(inst)):
        if lam < 0:
            mask[row.Q.support] = True
    return mask


def perturbed_continuous(inst: MiqcqpInstance, shifts, constraints_only: bool = False) -> np.ndarray:
    """Continuous indices touched by a shifted row (``L_c``)."""
    mask = np.zeros(inst.n, dtype=bool)
    rows = _rows(inst)
    for k, (lam, row) in enumerate(zip(shifts, rows)):
        if lam < 0 and not (constraints_only and k == 0):
            mask[row.Q.support] = True
    return mask & ~inst.integer


def clamp_uhat(inst: MiqcqpInstance, uhat) -> np.ndarray:
    u = np.asarray(uhat, dtype=float)
    if u.shape != (inst.n,):
        raise ConvexifyError("uhat must have length n")
    if not np.all(np.isfinite(u)):
        raise ConvexifyError("uhat must be finite")
    return np.clip(u, 0.0, inst.upper)


def _unwrap(inst) -> MiqcqpInstance:
    inst = inst.inst if isinstance(inst, NormalizedInstance) else inst
    if np.any(inst.lower != 0):
        raise ConvexifyError("builders expect a normalized instance (zero lower bounds)")
    return inst


def _perturbed_row(inst: MiqcqpInstance, row: QuadraticRow, lam: float, uhat: np.ndarray,
                   squares: dict) -> tuple[SymSparseMatrix, dict]:
    """Matrix and linear coefficients of one approximated row (over model
    variables; the first ``n`` model variables are the originals)."""
    lin = _coefs(row.a)
    if lam >= 0:
        return row.Q, lin
    S = row.Q.support
    Qp = SymSparseMatrix.from_entries(
        row.Q.dim, row.Q.entries() + [(int(i), int(i), -lam) for i in S])
    if extreme_eigenvalues(Qp).lo < -PSD_TOL:
        raise ConvexifyError("perturbed matrix is not positive semidefinite")
    for i in S:
        i = int(i)
        if inst.integer[i]:
            j = squares[i]
            lin[j] = lin.get(j, 0.0) + lam
        else:
            lin[i] = lin.get(i, 0.0) + lam * uhat[i]
    return Qp, lin


def _base(inst: MiqcqpInstance, shifts, name: str) -> tuple[ModelBuilder, dict, list]:
    """Original variables, linear rows, and square auxiliaries for perturbed integers."""
    b = ModelBuilder(name)
    add_original_vars(b, inst)
    add_linear_rows(b, inst)
    touched = perturbed_support(inst, shifts)
    squares, frags = {}, []
    for i in np.flatnonzero(touched & inst.integer):
        i = int(i)
        if inst.upper[i] <= 1:
            squares[i] = i  # X_ii = x_i for binaries (and integers fixed at 0)
            continue
        frag = build_h_linearization(b, i, binary_expand(i, inst.lower[i], inst.upper[i]))
        squares[i] = frag.X
        frags.append(frag)
    return b, squares, frags


def _check_shifts(inst: MiqcqpInstance, shifts) -> np.ndarray:
    shifts = np.asarray(shifts, dtype=float)
    if shifts.shape != (1 + inst.m1,):
        raise ConvexifyError("need one shift per row (objective first)")
    if np.any(shifts > 0):
        raise ConvexifyError("shifts must be nonpositive")
    return shifts


def build_approx(inst, uhat, shifts, name: str = "approx", clamp: bool = True) -> ModelIR:
    """Convex approximation ``Approx(uhat)``; tagged convex.

    ``uhat`` is clipped to ``[0, u]`` unless ``clamp`` is false, in which case
    it only has to be nonnegative (the objective-only fixed point needs
    ``uhat = 2x`` which may exceed ``u``).
    """
    inst = _unwrap(inst)
    shifts = _check_shifts(inst, shifts)
    if clamp:
        uhat = clamp_uhat(inst, uhat)
    else:
        uhat = np.asarray(uhat, dtype=float)
        if uhat.shape != (inst.n,) or not np.all(np.isfinite(uhat)) or np.any(uhat < 0):
            raise ConvexifyError("uhat must be finite, nonnegative and of length n")
    b, squares, _ = _base(inst, shifts, name)
    for lam, row in zip(shifts[1:], inst.quad_constraints):
        Q, lin = _perturbed_row(inst, row, lam, uhat, squares)
        b.add_quadratic(Q.entries(), lin, row.b)
    Q, lin = _perturbed_row(inst, inst.objective, shifts[0], uhat, squares)
    b.set_objective(Q.entries(), lin, inst.objective.b)
    return b.build(convex=True)


def build_relaxation(inst, shifts) -> ModelIR:
    inst = _unwrap(inst)
    return build_approx(inst, inst.upper.copy(), shifts, name="relaxation")


def build_fpr1(inst, uhat, shifts) -> ModelIR:
    """Deficiency model: minimize ``sum delta_i`` with ``delta_i >= uhat_i - x_i``
    over the continuous indices touched by a shifted constraint row, subject
    to the approximated constraint rows."""
    inst = _unwrap(inst)
    if inst.m1 < 1:
        raise ConvexifyError("deficiency model needs at least one quadratic constraint")
    shifts = _check_shifts(inst, shifts)
    cons_shifts = shifts.copy()
    cons_shifts[0] = 0.0
    uhat = clamp_uhat(inst, uhat)
    b, squares, _ = _base(inst, cons_shifts, "fpr1")
    for lam, row in zip(cons_shifts[1:], inst.quad_constraints):
        Q, lin = _perturbed_row(inst, row, lam, uhat, squares)
        b.add_quadratic(Q.entries(), lin, row.b)
    obj = {}
    for i in np.flatnonzero(perturbed_continuous(inst, cons_shifts)):
        i = int(i)
        d = b.add_var(f"delta_{i}", 0.0, max(uhat[i], 0.0), "continuous", ("delta", i))
        b.add_linear({d: 1.0, i: 1.0}, ">=", uhat[i])
        obj[d] = 1.0
    b.set_objective((), obj, 0.0)
    return b.build(convex=True)


def build_fpr2(inst) -> ModelIR:
    """Slack model: minimize ``sum s_k`` with ``x'Qk x + ak'x - s_k <= b_k``."""
    inst = _unwrap(inst)
    if inst.m1 < 1:
        raise ConvexifyError("slack model needs at least one quadratic constraint")
    b = ModelBuilder("fpr2")
    add_original_vars(b, inst)
    add_linear_rows(b, inst)
    obj = {}
    for k, row in enumerate(inst.quad_constraints):
        s = b.add_var(f"s_{k}", 0.0, np.inf, "continuous", ("s", k))
        lin = _coefs(row.a)
        lin[s] = -1.0
        b.add_quadratic(row.Q.entries(), lin, row.b)
        obj[s] = 1.0
    b.set_objective((), obj, 0.0)
    m = b.build()
    return replace(m, convex=model_is_convex(m))


def build_l1_projection(region: ModelIR, x_ref, over: Optional[Sequence[int]] = None) -> ModelIR:
    """Minimize ``sum_{j in over} |x_j - x_ref_j|`` over ``region``; the region's
    objective is dropped. ``x_ref`` is indexed like ``over`` (defaults to the
    original variables)."""
    if over is None:
        over = region.vars_with("x")
    over = np.asarray(over, dtype=int)
    ref = np.asarray(x_ref, dtype=float)
    if ref.shape != over.shape:
        raise ModelError("x_ref must match the projected index set")
    b = region.to_builder()
    obj = {}
    for j, r in zip(over.tolist(), ref.tolist()):
        if region.kinds[j] == "binary" and r in (0.0, 1.0):
            # |x - r| is linear for a binary with integral reference
            if r == 0.0:
                obj[j] = obj.get(j, 0.0) + 1.0
            else:
                obj[j] = obj.get(j, 0.0) - 1.0
            continue
        d = b.add_var(f"d_{j}", 0.0, np.inf, "continuous", ("l1", j, r))
        b.add_linear({d: 1.0, j: -1.0}, ">=", -r)
        b.add_linear({d: 1.0, j: 1.0}, ">=", r)
        obj[d] = obj.get(d, 0.0) + 1.0
    const = float(sum(1.0 for j, r in zip(over.tolist(), ref.tolist())
                      if region.kinds[j] == "binary" and r == 1.0))
    b.set_objective((), obj, const)
    return b.build(convex=region.convex)


# ---------------------------------------------------------------------------
# local branching constraints

def _lb_coefs(xbar, B) -> tuple[dict, int]:
    B = np.asarray(B, dtype=int)
    if len(B) == 0:
        raise ModelError("local branching needs at least one binary variable")
    xb = np.asarray(xbar, dtype=float)
    if xb.shape != B.shape:
        raise ModelError("reference must have one value per binary index")
    if np.any((xb != 0) & (xb != 1)):
        raise ModelError("reference values must be 0 or 1")
    coefs = {int(j): (-1.0 if v == 1 else 1.0) for j, v in zip(B, xb)}
    return coefs, int(np.sum(xb == 1))


def default_binaries(model: ModelIR) -> np.ndarray:
    """Binary original variables plus expansion bits."""
    return np.array([j for j, o in enumerate(model.origins)
                     if model.kinds[j] == "binary" and o[0] in ("x", "bit")], dtype=int)


def delta(x, xbar) -> int:
    """Hamming distance between binary vectors."""
    x = np.round(np.asarray(x, dtype=float))
    return int(np.sum(x != np.asarray(xbar, dtype=float)))


def delta_r(x, xbar) -> int:
    return len(np.asarray(xbar)) - delta(x, xbar)


def add_lbc(model: ModelIR, xbar, k_lo: int, k_hi: int, B=None) -> ModelIR:
    """Append ``k_lo <= Delta(x, xbar) <= k_hi`` over the binaries ``B``; a side
    is omitted when ``k_lo == 0`` or ``k_hi >= |B|``."""
    B = default_binaries(model) if B is None else np.asarray(B, dtype=int)
    coefs, ones = _lb_coefs(xbar, B)
    if k_lo < 0 or k_lo > k_hi:
        raise ModelError("need 0 <= k_lo <= k_hi")
    b = model.to_builder()
    if k_lo > 0:
        b.add_linear(coefs, ">=", k_lo - ones)
    if k_hi < len(B):
        b.add_linear(coefs, "<=", k_hi - ones)
    return b.build(convex=model.convex)


def add_rlbc(model: ModelIR, xbar, k: int, B=None) -> ModelIR:
    """Append ``Delta_r(x, xbar) = |B| - Delta(x, xbar) <= k``."""
    B = default_binaries(model) if B is None else np.asarray(B, dtype=int)
    coefs, ones = _lb_coefs(xbar, B)
    b = model.to_builder()
    # Delta_r = |B| - (sum c_j x_j + ones)
    b.add_linear(coefs, ">=", len(B) - k - ones)
    return b.build(convex=model.convex)


# ---------------------------------------------------------------------------
# lifting original points into model space

def lift(model: ModelIR, x, uhat=None) -> np.ndarray:
    """Values of every model variable implied by the original point ``x``.

    Bits, products and squares are determined by ``x``; slacks and distances
    take their smallest feasible values.
    """
    x = np.asarray(x, dtype=float)
    z = np.zeros(model.n)
    later = []
    for j, o in enumerate(model.origins):
        tag = o[0]
        if tag == "x":
            z[j] = x[o[1]]
        elif tag == "bit":
            i, h, lo = o[1], int(o[2]), float(o[3])
            k = int(round(x[i] - lo))
            z[j] = (k >> h) & 1 if k >= 0 else 0
        elif tag == "H":
            i, h1, h2 = o[1], int(o[2]), int(o[3])
            lo = next(float(p[3]) for p in model.origins if p[0] == "bit" and p[1] == i)
            k = int(round(x[i] - lo))
            z[j] = ((k >> h1) & 1) * ((k >> h2) & 1)
        elif tag == "X":
            z[j] = round(x[o[1]]) ** 2
        else:
            later.append(j)
    for j in later:
        o = model.origins[j]
        if o[0] == "delta":
            z[j] = max(0.0, model.rhs[_delta_row(model, j)] - x[o[1]])
        elif o[0] == "l1":
            z[j] = abs(z[int(o[1])] - float(o[2]))
    for j in later:
        if model.origins[j][0] == "s":
            for q in model.quad:
                if q.a[j] == -1.0:
                    z[j] = max(0.0, q.Q.quad(z) + float(q.a @ z) - q.rhs)
                    break
    return z


def _delta_row(model: ModelIR, j: int) -> int:
    col = model.A.tocsc()[:, j]
    return int(col.indices[0])


def approx_objective_at(model: ModelIR, x) -> float:
    return model.objective(lift(model, x))
