"""Local solver for the continuous block of a model with fixed integers."""

from __future__ import annotations

import time
from typing import Mapping, Optional, Union

import numpy as np
from scipy.optimize import minimize

from ..instance import MiqcqpInstance
from ..model import ModelIR, original_model
from .types import FEAS_TOL, SolveResult, Status


class _Timeout(Exception):
    pass


class _Problem:
    """Objective and constraint callbacks restricted to the free block."""

    def __init__(self, model: ModelIR, base: np.ndarray, free: np.ndarray):
        self.model, self.base, self.free = model, base, free
        A = model.A.tocsr()
        senses = np.array(model.senses)
        sign = np.where(senses == ">=", -1.0, 1.0)
        ineq = senses != "="
        touches = np.asarray(abs(A[:, free]).sum(axis=1)).ravel() > 0 if A.shape[0] else np.zeros(0, bool)
        self.A_in = (sign[ineq & touches, None] * A[ineq & touches].toarray())
        self.b_in = sign[ineq & touches] * model.rhs[ineq & touches]
        self.A_eq = A[~ineq & touches].toarray()
        self.b_eq = model.rhs[~ineq & touches]
        self.quad = [q for q in model.quad if np.any(np.isin(q.Q.support, free)) or np.any(q.a[free])]

    def full(self, z):
        x = self.base.copy()
        x[self.free] = z
        return x

    def f(self, z):
        return self.model.objective(self.full(z))

    def df(self, z):
        x = self.full(z)
        return (2.0 * self.model.obj_Q.matvec(x) + self.model.obj_c)[self.free]

    def g_in(self, z):
        x = self.full(z)
        lin = self.b_in - self.A_in @ x
        quad = [q.rhs - q.Q.quad(x) - float(q.a @ x) for q in self.quad]
        return np.concatenate([lin, quad])

    def dg_in(self, z):
        x = self.full(z)
        rows = [-self.A_in[:, self.free]]
        if self.quad:
            rows.append(np.array([-(2.0 * q.Q.matvec(x) + q.a)[self.free] for q in self.quad]))
        return np.vstack(rows) if rows else np.zeros((0, len(self.free)))

    def g_eq(self, z):
        return self.A_eq @ self.full(z) - self.b_eq

    def dg_eq(self, z):
        return self.A_eq[:, self.free]

    def penalty(self, z):
        gi = np.minimum(self.g_in(z), 0.0)
        ge = self.g_eq(z)
        val = float(gi @ gi + ge @ ge)
        grad = -2.0 * self.dg_in(z).T @ gi + 2.0 * self.dg_eq(z).T @ ge
        return val, grad


def local_solve(model: ModelIR, start, time_limit: float = 10.0,
                fixed: Optional[np.ndarray] = None, maxiter: int = 300) -> SolveResult:
    """Local minimization over the continuous variables from ``start``.

    Integer variables are fixed to ``round(start)`` (or ``fixed`` where given).
    SLSQP is run from the start point; when it ends infeasible a bound-
    constrained penalty phase restores feasibility and SLSQP is rerun. A
    feasible start is never worsened.
    """
    t0 = time.perf_counter()
    deadline = t0 + time_limit
    x0 = np.clip(np.asarray(start, dtype=float).copy(), model.lower, model.upper)
    x0[model.integer] = np.round(x0[model.integer])
    if fixed is not None:
        fixed = np.asarray(fixed, dtype=float)
        mask = ~np.isnan(fixed)
        x0[mask] = fixed[mask]
    free = np.flatnonzero(~model.integer & (model.lower < model.upper))
    if fixed is not None:
        free = free[~mask[free]]

    def done(x, note=""):
        viol = model.violation(x)
        st = Status.FEASIBLE if viol <= FEAS_TOL else Status.ERROR
        return SolveResult(st, x, model.objective(x) if st.has_solution else None,
                           wall_time_s=time.perf_counter() - t0, nodes=0,
                           message=note or ("" if st.has_solution else f"ended infeasible ({viol:.3g})"))

    if len(free) == 0:
        return done(x0)
    prob = _Problem(model, x0, free)
    bounds = [(None if not np.isfinite(model.lower[j]) else model.lower[j],
               None if not np.isfinite(model.upper[j]) else model.upper[j]) for j in free]
    cons = []
    if len(prob.b_in) + len(prob.quad):
        cons.append({"type": "ineq", "fun": prob.g_in, "jac": prob.dg_in})
    if len(prob.b_eq):
        cons.append({"type": "eq", "fun": prob.g_eq, "jac": prob.dg_eq})

    best = {"x": None, "f": np.inf, "v": np.inf}

    def consider(x):
        v = model.violation(x)
        fv = model.objective(x)
        feas, bfeas = v <= FEAS_TOL, best["v"] <= FEAS_TOL
        if (feas and (not bfeas or fv < best["f"])) or (not feas and not bfeas and v < best["v"]):
            best.update(x=x.copy(), f=fv, v=v)

    consider(x0)
    last = {"z": x0[free].copy()}

    def cb(z, *args):
        last["z"] = np.array(z)
        if time.perf_counter() > deadline:
            raise _Timeout

    def slsqp(z0):
        try:
            res = minimize(prob.f, z0, jac=prob.df, method="SLSQP", bounds=bounds,
                           constraints=cons, callback=cb,
                           options={"maxiter": maxiter, "ftol": 1e-12})
            z = res.x
        except _Timeout:
            z = last["z"]
        z = np.clip(z, [b[0] if b[0] is not None else -np.inf for b in bounds],
                    [b[1] if b[1] is not None else np.inf for b in bounds])
        x = prob.full(z)
        consider(x)
        return x

    x1 = slsqp(x0[free])
    if model.violation(x1) > FEAS_TOL and time.perf_counter() < deadline:
        try:
            res = minimize(prob.penalty, x1[free], jac=True, method="L-BFGS-B", bounds=bounds,
                           callback=cb, options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12})
            z = res.x
        except _Timeout:
            z = last["z"]
        xp = prob.full(z)
        consider(xp)
        if time.perf_counter() < deadline:
            slsqp(xp[free])
    return done(best["x"])


def solve_local_nlp(inst: MiqcqpInstance, fixed: Union[Mapping[int, float], np.ndarray, None],
                    start, time_limit_s: float = 10.0) -> SolveResult:
    """Local solve of ``inst`` with integer variables fixed.

    ``fixed`` maps integer indices to values; unspecified integers take
    ``round(start)``.
    """
    model = original_model(inst)
    fx = np.full(inst.n, np.nan)
    if isinstance(fixed, Mapping):
        for i, v in fixed.items():
            fx[int(i)] = float(v)
    elif fixed is not None:
        arr = np.asarray(fixed, dtype=float)
        fx[inst.integer] = arr[inst.integer]
    return local_solve(model, start, time_limit_s, fixed=fx)
