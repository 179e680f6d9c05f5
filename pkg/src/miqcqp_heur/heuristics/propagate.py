"""Interval domain propagation over linear and quadratic rows."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..instance import MiqcqpInstance, QuadraticRow

ROUNDS = 5
INFEAS_TOL = 1e-9
INT_SLACK = 1e-6


class Propagation(str, enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    UNKNOWN = "Unknown"


@dataclass
class PropagationResult:
    status: Propagation
    lower: np.ndarray
    upper: np.ndarray


def _interval_mul(a_lo, a_hi, b_lo, b_hi):
    with np.errstate(invalid="ignore"):
        p = np.array([a_lo * b_lo, a_lo * b_hi, a_hi * b_lo, a_hi * b_hi])
    p = np.where(np.isnan(p), 0.0, p)  # 0 * inf
    return p.min(axis=0), p.max(axis=0)


def _interval_square(lo, hi):
    sq_lo = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo * lo, hi * hi))
    return sq_lo, np.maximum(lo * lo, hi * hi)


def quadratic_range(row: QuadraticRow, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    """Interval enclosure of ``x'Qx + a'x`` over the box."""
    Q = row.Q
    r, c, v = Q.rows, Q.cols, Q.vals
    diag = r == c
    s_lo, s_hi = _interval_square(lo[r[diag]], hi[r[diag]])
    t_lo = np.where(v[diag] >= 0, v[diag] * s_lo, v[diag] * s_hi)
    t_hi = np.where(v[diag] >= 0, v[diag] * s_hi, v[diag] * s_lo)
    p_lo, p_hi = _interval_mul(lo[r[~diag]], hi[r[~diag]], lo[c[~diag]], hi[c[~diag]])
    w = 2.0 * v[~diag]
    o_lo = np.where(w >= 0, w * p_lo, w * p_hi)
    o_hi = np.where(w >= 0, w * p_hi, w * p_lo)
    l_lo, l_hi = _linear_range(row.a, lo, hi)
    return (float(t_lo.sum() + o_lo.sum() + l_lo), float(t_hi.sum() + o_hi.sum() + l_hi))


def _linear_range(a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    nz = a != 0
    a, lo, hi = a[nz], lo[nz], hi[nz]
    mn = np.where(a > 0, a * lo, a * hi).sum()
    mx = np.where(a > 0, a * hi, a * lo).sum()
    return float(mn), float(mx)


def propagate(inst: MiqcqpInstance, partial_fix: Mapping[int, float]) -> PropagationResult:
    """Tighten bounds after ``partial_fix`` and classify the fix.

    Infeasible means no completion exists; Feasible means every point of the
    tightened box with integral integer coordinates is feasible.
    """
    lo = inst.lower.astype(float).copy()
    hi = inst.upper.astype(float).copy()
    for i, v in partial_fix.items():
        lo[int(i)] = hi[int(i)] = float(v)
    integer = inst.integer
    A = inst.A.tocsr()
    infeasible = PropagationResult(Propagation.INFEASIBLE, lo, hi)

    for _ in range(ROUNDS):
        changed = False
        for k in range(A.shape[0]):
            s, e = A.indptr[k], A.indptr[k + 1]
            idx, a = A.indices[s:e], A.data[s:e]
            b = inst.b_A[k]
            contrib = np.where(a > 0, a * lo[idx], a * hi[idx])
            mn = contrib.sum()
            if mn > b + INFEAS_TOL:
                return infeasible
            if not np.isfinite(mn):
                continue
            for j, aj, cj in zip(idx, a, contrib):
                room = (b - (mn - cj)) / aj
                if aj > 0:
                    new = np.floor(room + INT_SLACK) if integer[j] else room + INFEAS_TOL
                    if new < hi[j] - 1e-12:
                        hi[j], changed = new, True
                else:
                    new = np.ceil(room - INT_SLACK) if integer[j] else room - INFEAS_TOL
                    if new > lo[j] + 1e-12:
                        lo[j], changed = new, True
            if np.any(lo > hi + INFEAS_TOL):
                return infeasible
        for row in inst.quad_constraints:
            if quadratic_range(row, lo, hi)[0] > row.b + INFEAS_TOL:
                return infeasible
        if not changed:
            break

    if A.shape[0]:
        act_max = np.array([_linear_range(A[k].toarray().ravel(), lo, hi)[1] for k in range(A.shape[0])])
        if np.any(act_max > inst.b_A):
            return PropagationResult(Propagation.UNKNOWN, lo, hi)
    for row in inst.quad_constraints:
        if quadratic_range(row, lo, hi)[1] > row.b:
            return PropagationResult(Propagation.UNKNOWN, lo, hi)
    return PropagationResult(Propagation.FEASIBLE, lo, hi)


def domain_propagate(inst: MiqcqpInstance, partial_fix: Mapping[int, float]) -> Propagation:
    for i, v in partial_fix.items():
        if not inst.lower[int(i)] - INFEAS_TOL <= v <= inst.upper[int(i)] + INFEAS_TOL:
            raise ValueError(f"fixed value {v} outside the bounds of variable {i}")
    return propagate(inst, partial_fix).status
