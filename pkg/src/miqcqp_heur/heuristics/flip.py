"""Rounding heuristics: random flip for box-constrained problems and random
flip followed by an l1 projection for linearly constrained problems."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..convexify import build_approx, build_l1_projection, select_shifts
from ..instance import MiqcqpInstance, NormalizedInstance, ProblemClass, classify, normalize
from ..model import ModelIR, original_model, relax_integrality
from ..solver.types import Goal, SolveRequest, Status
from .common import Budget, PumpConfig, PumpOutcome, Termination, Tracker
from .propagate import Propagation, domain_propagate


class HeuristicError(RuntimeError):
    pass


class _Objective:
    """True objective with a cached ``Q x`` for single-coordinate changes."""

    def __init__(self, inst: MiqcqpInstance, x: np.ndarray):
        self.Q = inst.objective.Q.csr
        self.diag = inst.objective.Q.diagonal()
        self.a = inst.objective.a
        self.x = np.array(x, dtype=float)
        self.Qx = self.Q @ self.x

    def change(self, i: int, value: float) -> float:
        d = value - self.x[i]
        return 2.0 * d * self.Qx[i] + d * d * self.diag[i] + self.a[i] * d

    def set(self, i: int, value: float) -> None:
        d = value - self.x[i]
        if d == 0:
            return
        s, e = self.Q.indptr[i], self.Q.indptr[i + 1]
        self.Qx[self.Q.indices[s:e]] += d * self.Q.data[s:e]
        self.x[i] = value


def solve_relaxed(model: ModelIR, n: int, config: PumpConfig, budget: Budget) -> Optional[np.ndarray]:
    """Original-variable block of the integer-relaxed optimum of ``model``."""
    req = SolveRequest(relax_integrality(model), budget.sub(config.subproblem_time_limit_s),
                       seed=config.seed)
    res = config.backend.solve(req)
    if not res.status.has_solution:
        return None
    return res.x[model.original_index(n)]


def _candidates(inst: MiqcqpInstance, i: int, v: float) -> tuple[float, float]:
    return (float(np.clip(np.floor(v), inst.lower[i], inst.upper[i])),
            float(np.clip(np.ceil(v), inst.lower[i], inst.upper[i])))


def flip_round(inst: MiqcqpInstance, x0, rng: np.random.Generator, propagate: bool = False) -> np.ndarray:
    """Round the integer coordinates of ``x0`` in a random order, choosing the
    side with the smaller objective (after feasibility screening when
    ``propagate`` is set)."""
    obj = _Objective(inst, np.clip(x0, inst.lower, inst.upper))
    fixes: dict[int, float] = {}
    order = rng.permutation(np.flatnonzero(inst.integer))
    for i in order:
        i = int(i)
        v = obj.x[i]
        lo, hi = _candidates(inst, i, v)
        if abs(v - round(v)) <= 1e-9 or lo == hi:
            choice = float(np.clip(round(v), inst.lower[i], inst.upper[i]))
        else:
            choice = None
            if propagate:
                bad_lo = domain_propagate(inst, {**fixes, i: lo}) is Propagation.INFEASIBLE
                bad_hi = domain_propagate(inst, {**fixes, i: hi}) is Propagation.INFEASIBLE
                if bad_lo != bad_hi:
                    choice = hi if bad_lo else lo
            if choice is None:
                choice = lo if obj.change(i, lo) <= obj.change(i, hi) else hi
        obj.set(i, choice)
        fixes[i] = choice
    return obj.x


def _relaxation_point(norm: NormalizedInstance, config: PumpConfig, budget: Budget, uhat=None,
                      clamp: bool = True) -> np.ndarray:
    inst = norm.inst
    shifts = select_shifts(inst, config.shift_rule)
    uhat = inst.upper.copy() if uhat is None else uhat
    x = solve_relaxed(build_approx(inst, uhat, shifts, clamp=clamp), inst.n, config, budget)
    if x is None:
        return 0.5 * (inst.lower + inst.upper)  # box center fallback
    return x


def random_flip(inst: MiqcqpInstance, config: Optional[PumpConfig] = None,
                budget_s: float = 300.0) -> PumpOutcome:
    """Relax, then round each fractional integer to its better neighbour."""
    config = config or PumpConfig()
    if classify(inst) is not ProblemClass.MIBQP:
        raise HeuristicError("random_flip needs a box-constrained instance")
    budget = Budget(budget_s)
    norm = normalize(inst)
    tracker = Tracker(inst, norm, budget, budget_s)
    x0 = _relaxation_point(norm, config, budget)
    x = flip_round(norm.inst, x0, np.random.default_rng(config.seed))
    tracker.offer(x)
    return tracker.outcome(1, Termination.CONVERGED, relaxation=norm.to_original(x0))


def project_l1(inst: MiqcqpInstance, x_ref, config: PumpConfig, budget: Budget,
               goal: Goal = Goal.BEST_WITHIN_LIMIT, region: Optional[ModelIR] = None):
    """l1 projection of ``x_ref`` onto ``region`` (default: the original
    feasible set). Returns ``(status, point)``."""
    region = original_model(inst, with_objective=False) if region is None else region
    model = build_l1_projection(region, np.asarray(x_ref, dtype=float))
    res = config.backend.solve(SolveRequest(model, budget.sub(config.subproblem_time_limit_s),
                                            goal=goal, seed=config.seed))
    if not res.status.has_solution:
        return res.status, None
    return res.status, res.x[model.original_index(inst.n)]


def rfp_step(norm: NormalizedInstance, config: PumpConfig, budget: Budget, rng: np.random.Generator,
             uhat=None, clamp: bool = True) -> Optional[np.ndarray]:
    """One pass of relax, propagate-and-flip, project (normalized space)."""
    inst = norm.inst
    x0 = _relaxation_point(norm, config, budget, uhat, clamp)
    x = flip_round(inst, x0, rng, propagate=True)
    status, y = project_l1(inst, x, config, budget)
    if status is Status.INFEASIBLE:
        raise HeuristicError("projection model is infeasible; the instance has no feasible point")
    return y


def random_flip_project(inst: MiqcqpInstance, config: Optional[PumpConfig] = None,
                        budget_s: float = 300.0) -> PumpOutcome:
    config = config or PumpConfig()
    if classify(inst) is not ProblemClass.MIQP:
        raise HeuristicError("random_flip_project needs a linearly constrained instance")
    budget = Budget(budget_s)
    norm = normalize(inst)
    tracker = Tracker(inst, norm, budget, budget_s)
    y = rfp_step(norm, config, budget, np.random.default_rng(config.seed))
    tracker.offer(y)
    why = Termination.CONVERGED if y is not None else Termination.TIME_BUDGET
    return tracker.outcome(1, why)
