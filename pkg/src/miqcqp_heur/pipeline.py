"""End-to-end run: classify, pump for a first solution, polish, then local
branching on the incumbent, all within one global time budget."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .convexify import perturbed_continuous, select_shifts
from .heuristics import (Budget, HeuristicError, PumpConfig, PumpOutcome, fixed_point_miqp,
                         race_pumps, random_flip, random_flip_project)
from .instance import (MiqcqpInstance, ProblemClass, check_feasible, classify, normalize,
                       objective_value)
from .localbranch import run_parallel_lb
from .metrics import BenchRecord, IncumbentTrace
from .solver.backend import make_backend
from .solver.nlp import solve_local_nlp

log = logging.getLogger(__name__)

PUMP_SHARE = 0.4
POLISH_STARTS = 3


@dataclass
class RunConfig:
    time_limit_s: float = 300.0
    workers: int = 4
    alpha: float = 0.5
    shift_rule: str = "safe"
    seed: int = 0
    backend: str = "internal"
    deterministic: bool = False
    eager_cut: bool = False
    subproblem_time_limit_s: float = 10.0
    local_branching: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.time_limit_s) and self.time_limit_s > 0):
            raise ValueError("time limit must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.shift_rule not in ("classic", "safe"):
            raise ValueError("shift rule must be 'classic' or 'safe'")
        if self.backend not in ("internal", "external"):
            raise ValueError("backend must be 'internal' or 'external'")

    def pump_config(self) -> PumpConfig:
        return PumpConfig(alpha=self.alpha, subproblem_time_limit_s=self.subproblem_time_limit_s,
                          seed=self.seed, shift_rule=self.shift_rule,
                          deterministic=self.deterministic, backend=make_backend(self.backend))


@dataclass
class RunResult:
    name: str
    problem_class: ProblemClass
    sense: str
    x: Optional[np.ndarray]
    objective: Optional[float]  # internal (minimization) value
    trace: IncumbentTrace
    wall_time: float
    pump: str = ""
    pump_terminated_by: Optional[str] = None
    pump_objective: Optional[float] = None
    lb_depth: int = 0
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.x is not None

    def reported_objective(self) -> Optional[float]:
        if self.objective is None:
            return None
        return -self.objective if self.sense == "max" else self.objective

    def to_json(self, best_known: Optional[float] = None) -> dict:
        sign = -1.0 if self.sense == "max" else 1.0
        rec = BenchRecord.from_trace(self.name, self.problem_class.value, self.trace, best_known,
                                     self.wall_time, self.sense)
        return {
            "instance": self.name,
            "class": self.problem_class.value,
            "sense": self.sense,
            "found": self.found,
            "objective": self.reported_objective(),
            "solution": None if self.x is None else [float(v) for v in self.x],
            "trace": [[t, sign * v] for t, v in self.trace.events],
            "metrics": asdict(rec),
            "pump": {"name": self.pump, "terminated_by": self.pump_terminated_by,
                     "objective": None if self.pump_objective is None else sign * self.pump_objective},
            "local_branching": {"depth": self.lb_depth},
            "wall_time": self.wall_time,
            "config": self.config,
            "notes": self.notes,
        }


def choose_pump(inst: MiqcqpInstance, shift_rule: str = "safe") -> str:
    cls = classify(inst)
    if cls is ProblemClass.MIBQP:
        return "random_flip"
    if cls is ProblemClass.MIQP:
        ni = normalize(inst).inst
        shifts = select_shifts(ni, shift_rule)
        return "fixed_point_miqp" if perturbed_continuous(ni, shifts).any() else "random_flip_project"
    return "race_pumps"


PUMPS = {
    "random_flip": random_flip,
    "random_flip_project": random_flip_project,
    "fixed_point_miqp": fixed_point_miqp,
    "race_pumps": race_pumps,
}


def polish(inst: MiqcqpInstance, x, budget: Budget, seed: int = 0) -> np.ndarray:
    """Local solves over the continuous block with the integers of ``x`` fixed,
    from ``x`` and a few random starts; returns the best feasible point."""
    best, best_f = x, objective_value(inst, x)
    if not (~inst.integer).any():
        return best
    rng = np.random.default_rng(seed)
    lo = np.where(np.isfinite(inst.lower), inst.lower, -1.0)
    up = np.where(np.isfinite(inst.upper), inst.upper, 1.0)
    starts = [x] + [np.where(inst.integer, x, rng.uniform(lo, up)) for _ in range(POLISH_STARTS - 1)]
    for s in starts:
        if budget.expired:
            break
        res = solve_local_nlp(inst, x, s, budget.sub(5.0))
        if res.status.has_solution and check_feasible(inst, res.x, 1e-6):
            f = objective_value(inst, res.x)
            if f < best_f:
                best, best_f = res.x, f
    return best


def solve_instance(inst: MiqcqpInstance, config: Optional[RunConfig] = None) -> RunResult:
    config = config or RunConfig()
    budget = Budget(config.time_limit_s)
    cls = classify(inst)
    trace = IncumbentTrace(horizon=config.time_limit_s, start=budget.start)
    result = RunResult(inst.name, cls, inst.sense, None, None, trace, 0.0,
                       config=asdict(config))

    def now() -> float:
        return min(budget.now(), config.time_limit_s)

    def offer(x) -> None:
        if x is None or not check_feasible(inst, x, 1e-6):
            return
        f = objective_value(inst, x)
        if result.objective is None or f < result.objective:
            result.x, result.objective = np.asarray(x, dtype=float), f
            trace.record(f, now())

    name = choose_pump(inst, config.shift_rule)
    result.pump = name
    pump_budget = min(budget.remaining, PUMP_SHARE * config.time_limit_s)
    t_pump = budget.now()
    try:
        out: PumpOutcome = PUMPS[name](inst, config.pump_config(), pump_budget)
        result.pump_terminated_by = out.terminated_by.value
        result.pump_objective = out.objective
        for t, v in out.trace.events:
            if result.objective is None or v < result.objective:
                trace.record(v, min(t_pump + t, now()))
        if out.x_star is not None:
            result.x, result.objective = out.x_star, out.objective
    except HeuristicError as exc:
        result.notes.append(f"pump failed: {exc}")

    if result.x is not None and not budget.expired:
        offer(polish(inst, result.x, budget, config.seed))
    if result.x is not None and config.local_branching and budget.remaining > 0.5:
        lb = run_parallel_lb(inst, result.x, budget.remaining, config.workers,
                             deterministic=config.deterministic, eager_cut=config.eager_cut,
                             backend=make_backend(config.backend), seed=config.seed,
                             start=budget.start)
        result.lb_depth = lb.depth
        result.notes.extend(lb.log)
        for t, v in lb.trace.events:
            if v < result.objective:
                trace.record(v, min(t, config.time_limit_s))
        if lb.objective < result.objective:
            result.x, result.objective = lb.x, lb.objective
    result.wall_time = time.perf_counter() - budget.start
    return result
