"""Pumps for quadratically constrained problems: the two-projection method,
the relaxing projection method, and a race between them."""

from __future__ import annotations

import threading
from typing import Callable, Optional

import numpy as np

from ..convexify import build_approx, build_fpr1, build_fpr2, lift, select_shifts
from ..instance import MiqcqpInstance, NormalizedInstance, ProblemClass, classify, normalize
from ..metrics import IncumbentTrace
from ..model import original_model, relax_integrality
from ..solver.nlp import local_solve
from ..solver.types import FEAS_TOL, Goal, SolveRequest
from .common import Budget, PeerSignal, PumpConfig, PumpOutcome, Termination, Tracker
from .flip import HeuristicError, project_l1

DEFAULT_ITERATIONS = 10
ZERO_TOL = 1e-7

TWO_PROJECTION = "two_projection"
RELAXING_PROJECTION = "relaxing_projection"


class _Run:
    """State shared by both pumps: normalized instance, shifts, models, tracker
    and peer bookkeeping."""

    def __init__(self, name: str, inst: MiqcqpInstance, config: Optional[PumpConfig], budget_s: float,
                 peer: Optional[PeerSignal], start: Optional[float]):
        if classify(inst) is not ProblemClass.MIQCP:
            raise HeuristicError(f"{name} needs a quadratically constrained instance")
        self.name = name
        self.config = config or PumpConfig()
        self.budget = Budget(budget_s, start)
        self.norm: NormalizedInstance = normalize(inst)
        self.ni = self.norm.inst
        self.shifts = select_shifts(self.ni, self.config.shift_rule)
        self.orig = original_model(self.ni)
        self.region = original_model(self.ni, with_objective=False)
        self.tracker = Tracker(inst, self.norm, self.budget, budget_s)
        self.peer = peer
        self.extra_used = False
        self.cont = ~self.ni.integer

    # -- control ----------------------------------------------------------
    def stop_reason(self) -> Optional[Termination]:
        """Checked at every iteration boundary."""
        if self.budget.expired:
            return Termination.TIME_BUDGET
        if self.peer is not None and self.peer.set and self.peer.winner != self.name:
            if self.extra_used:
                return Termination.PEER_WIN
            self.extra_used = True  # one more iteration after the peer's success
        return None

    def announce(self) -> None:
        if self.peer is not None and self.tracker.x is not None:
            self.peer.announce(self.name)

    # -- shared steps -----------------------------------------------------
    def initial_point(self) -> np.ndarray:
        """Local solve of the continuous relaxation from the box center."""
        center = 0.5 * (self.ni.lower + self.ni.upper)
        res = local_solve(relax_integrality(self.orig), center,
                          self.budget.sub(self.config.subproblem_time_limit_s))
        return center if res.x is None else res.x

    def initial_uhat(self, x0) -> np.ndarray:
        return np.where(self.cont, np.clip(2.0 * x0, 0.0, self.ni.upper), self.ni.upper)

    def double(self, uhat) -> np.ndarray:
        out = uhat.copy()
        out[self.cont] = np.minimum(2.0 * uhat[self.cont], self.ni.upper[self.cont])
        return out

    def relax_toward(self, uhat, x) -> np.ndarray:
        a = self.config.alpha
        out = uhat.copy()
        out[self.cont] = np.clip(a * uhat[self.cont] + (1.0 - a) * x[self.cont], 0.0,
                                 self.ni.upper[self.cont])
        return out

    def polish(self, x) -> None:
        """Fix the integers of ``x`` and solve locally; both points are offered."""
        self.tracker.offer(x)
        if self.budget.expired:
            return
        res = local_solve(self.orig, x, self.budget.sub(self.config.subproblem_time_limit_s),
                          fixed=np.where(self.ni.integer, np.round(x), np.nan))
        if res.status.has_solution:
            self.tracker.offer(res.x)

    def feasible(self, x) -> bool:
        return self.region.violation(x) <= FEAS_TOL


def two_projection(inst: MiqcqpInstance, config: Optional[PumpConfig] = None, budget_s: float = 300.0,
                   peer: Optional[PeerSignal] = None, start: Optional[float] = None) -> PumpOutcome:
    """Alternate an l1 projection onto ``Approx(uhat)`` with an l1 projection
    onto the original feasible set; ``uhat`` doubles when the first fails and
    moves toward the first projection when the second fails."""
    run = _Run(TWO_PROJECTION, inst, config, budget_s, peer, start)
    cfg = run.config
    x0 = run.initial_point()
    uhat = run.initial_uhat(x0)
    doublings = relaxations = 0
    why, x2, it = Termination.MAX_ITER, None, 0
    for it in range(1, cfg.iterations(DEFAULT_ITERATIONS) + 1):
        stop = run.stop_reason()
        if stop is not None:
            why, it = stop, it - 1
            break
        approx = build_approx(run.ni, uhat, run.shifts)
        _, x1 = project_l1(run.ni, x0, cfg, run.budget, Goal.FIRST_FEASIBLE, region=approx)
        if x1 is None:
            if np.all(uhat[run.cont] >= run.ni.upper[run.cont]):
                why = Termination.CONVERGED  # the relaxation itself has no point
                break
            uhat = run.double(uhat)
            doublings += 1
            continue
        if run.feasible(x1):
            x2 = x1
        else:
            _, x2 = project_l1(run.ni, x1, cfg, run.budget, Goal.FIRST_FEASIBLE, region=run.region)
        if x2 is None:
            uhat = run.relax_toward(uhat, x1)
            relaxations += 1
            continue
        run.tracker.offer(x2)
        run.announce()
        why = Termination.CONVERGED
        break
    if x2 is not None:
        run.polish(x2)
        run.announce()
    return run.tracker.outcome(it, why, doublings=doublings, relaxations=relaxations, pump=run.name)


def _fpr1_step(run: _Run, uhat):
    """Solve the deficiency model; returns ``(x1, sum delta)`` or ``None``."""
    model = build_fpr1(run.ni, uhat, run.shifts)
    res = run.config.backend.solve(SolveRequest(model, run.budget.sub(run.config.subproblem_time_limit_s),
                                                seed=run.config.seed))
    if not res.status.has_solution:
        return None
    return res.x[model.original_index(run.ni.n)], float(res.objective)


def _fpr2_step(run: _Run, x1):
    """Local slack minimization with the integers of ``x1`` fixed, warm
    started at ``s_k = max(0, violation_k)``; returns ``(x2, sum s)``."""
    model = build_fpr2(run.ni)
    z0 = lift(model, x1)
    fixed = np.full(model.n, np.nan)
    fixed[model.integer] = np.round(z0[model.integer])
    res = local_solve(model, z0, run.budget.sub(run.config.subproblem_time_limit_s), fixed=fixed)
    z = res.x if res.x is not None else z0
    return z[model.original_index(run.ni.n)], float(model.objective(z))


def relaxing_projection(inst: MiqcqpInstance, config: Optional[PumpConfig] = None, budget_s: float = 300.0,
                        peer: Optional[PeerSignal] = None, start: Optional[float] = None) -> PumpOutcome:
    """Minimize the deficiency ``sum max(0, uhat_i - x_i)`` over ``Approx(uhat)``;
    a zero optimum is original-feasible. Otherwise minimize the constraint
    slacks locally and move ``uhat`` toward that point."""
    run = _Run(RELAXING_PROJECTION, inst, config, budget_s, peer, start)
    cfg = run.config
    x0 = run.initial_point()
    uhat = run.initial_uhat(x0)
    doublings = relaxations = 0
    deficiencies, slacks = [], []
    why, x3, it = Termination.MAX_ITER, None, 0
    for it in range(1, cfg.iterations(DEFAULT_ITERATIONS) + 1):
        stop = run.stop_reason()
        if stop is not None:
            why, it = stop, it - 1
            break
        step = _fpr1_step(run, uhat)
        if step is None:
            if np.all(uhat[run.cont] >= run.ni.upper[run.cont]):
                why = Termination.CONVERGED
                break
            uhat = run.double(uhat)
            doublings += 1
            continue
        x1, dsum = step
        deficiencies.append(dsum)
        if dsum <= ZERO_TOL:
            x3 = x1
        else:
            x2, ssum = _fpr2_step(run, x1)
            slacks.append(ssum)
            if ssum <= ZERO_TOL and run.feasible(x2):
                x3 = x2
            else:
                uhat = run.relax_toward(uhat, x2)
                relaxations += 1
                continue
        run.tracker.offer(x3)
        run.announce()
        why = Termination.CONVERGED
        break
    if x3 is not None:
        run.polish(x3)
        run.announce()
    return run.tracker.outcome(it, why, doublings=doublings, relaxations=relaxations,
                               deficiencies=deficiencies, slacks=slacks, pump=run.name)


def _better(a: PumpOutcome, b: PumpOutcome) -> PumpOutcome:
    if a.x_star is None:
        return b
    if b.x_star is None:
        return a
    return a if a.objective <= b.objective else b


def race_pumps(inst: MiqcqpInstance, config: Optional[PumpConfig] = None,
               budget_s: float = 300.0) -> PumpOutcome:
    """Run both pumps; once one finds a feasible point the other stops after
    one more iteration. With ``config.deterministic`` the relaxing projection
    runs first, then the two-projection method sees the signal up front."""
    config = config or PumpConfig()
    if classify(inst) is not ProblemClass.MIQCP:
        raise HeuristicError("race_pumps needs a quadratically constrained instance")
    peer = PeerSignal()
    budget = Budget(budget_s)
    results: dict[str, PumpOutcome] = {}
    errors: list[BaseException] = []

    def worker(name: str, fn: Callable) -> None:
        try:
            results[name] = fn(inst, config, budget.remaining, peer, budget.start)
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    jobs = [(RELAXING_PROJECTION, relaxing_projection), (TWO_PROJECTION, two_projection)]
    if config.deterministic:
        for name, fn in jobs:
            worker(name, fn)
    else:
        threads = [threading.Thread(target=worker, args=job, daemon=True) for job in jobs]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if not results:
        raise errors[0]
    outs = list(results.values())
    best = outs[0] if len(outs) == 1 else _better(*outs)
    trace = IncumbentTrace(horizon=budget_s, start=budget.start)
    for t, v in sorted(ev for o in outs for ev in o.trace.events):
        trace.record(v, t)
    return PumpOutcome(best.x_star, best.objective, trace, sum(o.iterations for o in outs),
                       best.terminated_by, {"winner": peer.winner, "pumps": results,
                                            "errors": [repr(e) for e in errors]})
