"""Exhaustive oracle for tiny instances: every integer assignment times a grid
over the continuous box, followed by local polishing of the best grid points."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from ..instance import MiqcqpInstance
from .nlp import solve_local_nlp
from .types import FEAS_TOL, SolveResult, Status

MAX_INTEGERS = 16
MAX_RANGE = 8
MAX_CONTINUOUS = 3
MAX_POINTS = 5_000_000
POLISH_TOP = 12


class BruteForceError(ValueError):
    pass


@dataclass
class BruteForceResult(SolveResult):
    enumerated: int = 0


def _batch_eval(inst: MiqcqpInstance, X: np.ndarray):
    """Objective and max violation for the rows of ``X``."""
    def quad(row, X):
        return np.einsum("ij,ij->i", X @ row.Q.to_dense(), X) + X @ row.a

    obj = quad(inst.objective, X) + inst.objective.b
    viol = np.zeros(len(X))
    for r in inst.quad_constraints:
        viol = np.maximum(viol, quad(r, X) - r.b)
    if inst.m2:
        viol = np.maximum(viol, np.max(X @ inst.A.T.toarray() - inst.b_A, axis=1))
    return obj, viol


def brute_force(inst: MiqcqpInstance, continuous_grid: int = 21, time_limit_s: float = 120.0,
                polish: bool = True) -> BruteForceResult:
    t0 = time.perf_counter()
    ints = np.flatnonzero(inst.integer)
    cont = np.flatnonzero(~inst.integer)
    ranges = [np.arange(inst.lower[i], inst.upper[i] + 0.5) for i in ints]
    if len(ints) > MAX_INTEGERS or any(len(r) > MAX_RANGE for r in ranges) or len(cont) > MAX_CONTINUOUS:
        return BruteForceResult(Status.ERROR, message="instance exceeds brute-force size guard")
    grids = [np.linspace(inst.lower[i], inst.upper[i], continuous_grid if inst.upper[i] > inst.lower[i] else 1)
             for i in cont]
    n_int = int(np.prod([len(r) for r in ranges])) if len(ranges) else 1
    n_grid = int(np.prod([len(g) for g in grids])) if grids else 1
    if n_int * n_grid > MAX_POINTS:
        return BruteForceResult(Status.ERROR, message="enumeration too large")

    cgrid = np.array(list(itertools.product(*grids))) if grids else np.zeros((1, 0))
    best_per_assign = []  # (obj, viol, x)
    chunk = max(1, 200_000 // max(1, n_grid))
    assigns = itertools.product(*ranges) if ranges else iter([()])
    enumerated = 0
    while True:
        block = list(itertools.islice(assigns, chunk))
        if not block:
            break
        A = np.array(block, dtype=float).reshape(len(block), len(ints))
        X = np.zeros((len(block) * n_grid, inst.n))
        X[:, ints] = np.repeat(A, n_grid, axis=0)
        X[:, cont] = np.tile(cgrid, (len(block), 1))
        obj, viol = _batch_eval(inst, X)
        enumerated += len(X)
        obj = obj.reshape(len(block), n_grid)
        viol = viol.reshape(len(block), n_grid)
        for b in range(len(block)):
            feas = viol[b] <= FEAS_TOL
            if feas.any():
                k = int(np.argmin(np.where(feas, obj[b], np.inf)))
                best_per_assign.append((0, obj[b, k], X[b * n_grid + k]))
            else:
                k = int(np.argmin(viol[b]))
                best_per_assign.append((1, viol[b, k], X[b * n_grid + k]))
        if time.perf_counter() - t0 > time_limit_s:
            return BruteForceResult(Status.ERROR, message="brute force exceeded its time limit",
                                    enumerated=enumerated)

    best_x, best_f = None, np.inf
    for flag, val, x in best_per_assign:
        if flag == 0 and val < best_f:
            best_x, best_f = x.copy(), float(val)
    if polish and len(cont):
        best_per_assign.sort(key=lambda t: (t[0], t[1]))
        for flag, val, x in best_per_assign[:POLISH_TOP]:
            res = solve_local_nlp(inst, None, x, 5.0)
            if res.status.has_solution:
                o = inst.objective.value(res.x) + inst.objective.b
                if o < best_f:
                    best_x, best_f = res.x.copy(), float(o)
    t = time.perf_counter() - t0
    if best_x is None:
        return BruteForceResult(Status.INFEASIBLE, wall_time_s=t, exhausted=True,
                                message="no feasible grid or polished point", enumerated=enumerated)
    st = Status.OPTIMAL if len(cont) == 0 else Status.FEASIBLE
    return BruteForceResult(st, best_x, best_f, None, t, 0, True, enumerated=enumerated)
