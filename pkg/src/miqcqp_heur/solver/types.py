"""Request/result types and the backend contract."""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from ..model import ModelIR

FEAS_TOL = 1e-6


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    TIME_LIMIT = "TimeLimitNoSolution"
    ERROR = "Error"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


class Goal(str, enum.Enum):
    PROVE_OPTIMAL = "prove-optimal"
    FIRST_FEASIBLE = "first-feasible"
    BEST_WITHIN_LIMIT = "best-within-limit"


class CancelToken:
    """Cooperative cancellation flag checked at node boundaries."""

    def __init__(self, parent: Optional["CancelToken"] = None):
        self._event = threading.Event()
        self._parent = parent

    def cancel(self) -> None:
        self._event.set()

    @property
    def cancelled(self) -> bool:
        return self._event.is_set() or (self._parent is not None and self._parent.cancelled)


@dataclass
class SolveRequest:
    model: ModelIR
    time_limit_s: float = 10.0
    goal: Goal = Goal.BEST_WITHIN_LIMIT
    warm_start: Optional[np.ndarray] = None
    seed: int = 0
    cutoff: Optional[float] = None
    cancel: Optional[CancelToken] = None
    workers: int = 1
    node_limit: Optional[int] = None  # work cap that makes runs independent of timing

    def __post_init__(self):
        if not (np.isfinite(self.time_limit_s) and self.time_limit_s > 0):
            raise ValueError("time limit must be finite and positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node limit must be positive")
        self.goal = Goal(self.goal)


@dataclass
class SolveResult:
    status: Status
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    dual_bound: Optional[float] = None
    wall_time_s: float = 0.0
    nodes: int = 0
    exhausted: bool = False
    message: str = ""

    def __post_init__(self):
        self.status = Status(self.status)
        if self.status is Status.INFEASIBLE:
            self.x = None
            self.objective = None


class SolverBackend(Protocol):
    capabilities: frozenset

    def solve(self, request: SolveRequest) -> SolveResult: ...


class Deadline:
    def __init__(self, seconds: float, cancel: Optional[CancelToken] = None):
        self.start = time.perf_counter()
        self.end = self.start + seconds
        self.cancel = cancel

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    @property
    def remaining(self) -> float:
        return max(0.0, self.end - time.perf_counter())

    @property
    def expired(self) -> bool:
        return time.perf_counter() >= self.end or (self.cancel is not None and self.cancel.cancelled)


def validated(model: ModelIR, result: SolveResult, tol: float = FEAS_TOL) -> SolveResult:
    """Downgrade a result whose point does not satisfy ``model`` to an error."""
    if result.status.has_solution:
        if result.x is None or len(result.x) != model.n:
            return SolveResult(Status.ERROR, wall_time_s=result.wall_time_s,
                               message="solution vector missing or wrong length")
        viol = model.violation(result.x)
        if viol > tol:
            return SolveResult(Status.ERROR, wall_time_s=result.wall_time_s,
                               message=f"returned point violates the model by {viol:.3g}")
    return result
