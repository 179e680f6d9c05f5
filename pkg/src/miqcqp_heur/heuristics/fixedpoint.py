"""Fixed-point iteration on ``uhat`` for linearly constrained problems.

With the integers fixed, let ``x(uhat)`` minimize ``Approx(uhat)``. The map
``uhat -> 2 x(uhat)`` has as fixed points exactly the stationary points of the
true objective: at ``uhat = 2x`` the gradient of the shifted objective
``2(Q - lam I)x + a + lam uhat`` equals ``2Qx + a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..convexify import build_approx, lift, perturbed_continuous, select_shifts
from ..instance import MiqcqpInstance, NormalizedInstance, ProblemClass, classify, normalize, objective_value
from ..solver.relax import ConicRelaxation
from .common import Budget, PumpConfig, PumpOutcome, Termination, Tracker
from .flip import HeuristicError, rfp_step

DEFAULT_ITERATIONS = 20
STALL_LIMIT = 3
BOUND_SNAP = 1e-6


def solve_fixed_integers(norm: NormalizedInstance, shifts, uhat, x_int, time_limit: float) -> Optional[np.ndarray]:
    """``x(uhat)``: optimum of ``Approx(uhat)`` with integers fixed to ``x_int``."""
    inst = norm.inst
    model = build_approx(inst, uhat, shifts, clamp=False)
    z = lift(model, np.where(inst.integer, np.round(x_int), 0.0))
    fixed = model.fix(model.integer, z)
    r = ConicRelaxation(fixed).solve(fixed.lower, fixed.upper, time_limit)
    if r.status != "optimal":
        return None
    x = r.x[model.original_index(inst.n)]
    x[inst.integer] = np.round(x_int[inst.integer])
    x = np.clip(x, inst.lower, inst.upper)
    # interior-point iterates stop just short of active bounds
    x = np.where(x - inst.lower <= BOUND_SNAP, inst.lower, x)
    return np.where(inst.upper - x <= BOUND_SNAP, inst.upper, x)


def kkt_residual(inst: MiqcqpInstance, x, free=None) -> float:
    """Projected-gradient residual of the objective over the box, restricted
    to ``free`` (default: continuous variables)."""
    x = np.asarray(x, dtype=float)
    free = np.flatnonzero(~inst.integer) if free is None else np.asarray(free, dtype=int)
    g = 2.0 * inst.objective.Q.matvec(x) + inst.objective.a
    step = np.clip(x - g, inst.lower, inst.upper) - x
    return float(np.max(np.abs(step[free]), initial=0.0))


@dataclass
class FixedPointResult:
    x: Optional[np.ndarray]
    uhat: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = False


def continuous_fixed_point(norm: NormalizedInstance, shifts, x_int, uhat0, budget: Budget,
                           alpha: float = 0.5, memory: int = 5, tol: float = 1e-9,
                           max_iter: int = 200) -> FixedPointResult:
    """Anderson-accelerated iteration of ``uhat <- alpha uhat + (1-alpha) 2x(uhat)``
    on the perturbed continuous indices, integers held at ``x_int``."""
    inst = norm.inst
    P = np.flatnonzero(perturbed_continuous(inst, shifts))
    uhat = np.array(uhat0, dtype=float)
    uhat[P] = np.clip(uhat[P], 0.0, 2.0 * inst.upper[P])
    mix = 1.0 - alpha
    dU, dG = [], []
    prev_u = prev_g = None
    x = None
    residuals = []
    accelerate = memory > 0
    stalled = 0
    for it in range(1, max_iter + 1):
        if budget.expired:
            return FixedPointResult(x, uhat, it - 1, residuals)
        x_new = solve_fixed_integers(norm, shifts, uhat, x_int, budget.sub(10.0))
        if x_new is None:
            return FixedPointResult(x, uhat, it - 1, residuals)
        x = x_new
        g = 2.0 * x[P] - uhat[P]
        res = float(np.max(np.abs(g), initial=0.0))
        residuals.append(res)
        if res <= tol:
            return FixedPointResult(x, uhat, it, residuals, True)
        # the secant model is also attracted by repelling fixed points (interior
        # points along negative curvature); fall back to plain averaging once
        # the residual stops decreasing
        stalled = stalled + 1 if len(residuals) > 1 and res >= residuals[-2] else 0
        if stalled >= STALL_LIMIT:
            accelerate = False
        u = uhat[P].copy()
        step = u + mix * g
        if accelerate:
            if prev_g is not None:
                dU.append(u - prev_u)
                dG.append(g - prev_g)
                if len(dU) > memory:
                    dU.pop(0)
                    dG.pop(0)
            prev_u, prev_g = u, g
            if dG:
                G = np.column_stack(dG)
                U = np.column_stack(dU)
                gamma = np.linalg.lstsq(G, g, rcond=None)[0]
                step = u + mix * g - (U + mix * G) @ gamma
        uhat[P] = np.clip(step, 0.0, 2.0 * inst.upper[P])
    return FixedPointResult(x, uhat, max_iter, residuals)


def fixed_point_miqp(inst: MiqcqpInstance, config: Optional[PumpConfig] = None,
                     budget_s: float = 300.0, refine: bool = True) -> PumpOutcome:
    """Repeated random-flip-and-project on ``Approx(uhat)`` with the update
    ``uhat_j <- alpha uhat_j + 2 (1 - alpha) x_j`` on continuous indices while
    the objective improves by more than ``epsilon_improve``.

    After the loop the best integer assignment is refined by the accelerated
    continuous fixed point (``refine``).
    """
    config = config or PumpConfig()
    if classify(inst) is not ProblemClass.MIQP:
        raise HeuristicError("fixed_point_miqp needs a linearly constrained instance")
    budget = Budget(budget_s)
    norm = normalize(inst)
    ni = norm.inst
    shifts = select_shifts(ni, config.shift_rule)
    tracker = Tracker(inst, norm, budget, budget_s)
    rng = np.random.default_rng(config.seed)
    cont = ~ni.integer
    uhat = ni.upper.copy()
    obj = np.inf
    recorded: list[float] = []
    why = Termination.MAX_ITER
    it = 0
    for it in range(1, config.iterations(DEFAULT_ITERATIONS) + 1):
        if budget.expired:
            why = Termination.TIME_BUDGET
            break
        y = rfp_step(norm, config, budget, rng, uhat, clamp=False)
        if y is None:
            why = Termination.TIME_BUDGET
            break
        # x(uhat) with the flipped integers fixed feeds the update
        xu = solve_fixed_integers(norm, shifts, uhat, y, budget.sub(config.subproblem_time_limit_s))
        tracker.offer(y)
        if xu is not None:
            tracker.offer(xu)
        target = xu if xu is not None else y
        f = min(objective_value(ni, y), objective_value(ni, target))
        if obj - f > config.epsilon_improve:
            uhat[cont] = config.alpha * uhat[cont] + 2.0 * (1.0 - config.alpha) * target[cont]
            uhat = np.maximum(uhat, 0.0)
            obj = f
            recorded.append(f)
        else:
            why = Termination.CONVERGED
            break
    fp = None
    if refine and tracker.x is not None and not budget.expired:
        start = norm.from_original(tracker.x)
        u0 = np.where(cont, 2.0 * start, ni.upper)
        fp = continuous_fixed_point(norm, shifts, start, u0, budget, config.alpha)
        if fp.x is not None:
            tracker.offer(fp.x)
    return tracker.outcome(it, why, objectives=recorded, uhat=uhat.copy(),
                           fixed_point=fp)
