"""Configuration and outcome types shared by the pumps."""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..instance import MiqcqpInstance, NormalizedInstance, check_feasible, objective_value
from ..metrics import IncumbentTrace
from ..solver.backend import InternalBackend


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    TIME_BUDGET = "TimeBudget"
    PEER_WIN = "PeerWin"


@dataclass
class PumpConfig:
    alpha: float = 0.5
    max_iter: Optional[int] = None  # None: 20 for the MIQP fixed point, 10 for the MIQCP pumps
    subproblem_time_limit_s: float = 10.0
    epsilon_improve: float = 1e-6
    seed: int = 0
    shift_rule: str = "safe"
    deterministic: bool = False
    backend: object = field(default_factory=InternalBackend, repr=False)

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.subproblem_time_limit_s <= 0:
            raise ValueError("subproblem time limit must be positive")
        if self.epsilon_improve < 0:
            raise ValueError("epsilon_improve must be nonnegative")
        if self.shift_rule not in ("classic", "safe"):
            raise ValueError("shift rule must be 'classic' or 'safe'")

    def iterations(self, default: int) -> int:
        return self.max_iter if self.max_iter is not None else default


@dataclass
class PumpOutcome:
    x_star: Optional[np.ndarray]
    objective: Optional[float]
    trace: IncumbentTrace
    iterations: int
    terminated_by: Termination
    info: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return self.x_star is not None


class Budget:
    """Wall-clock budget shared with an optional clock origin for traces."""

    def __init__(self, seconds: float, start: Optional[float] = None):
        self.start = time.perf_counter() if start is None else start
        self.end = time.perf_counter() + seconds

    @property
    def remaining(self) -> float:
        return max(0.0, self.end - time.perf_counter())

    @property
    def expired(self) -> bool:
        return time.perf_counter() >= self.end

    def now(self) -> float:
        return time.perf_counter() - self.start

    def sub(self, limit: float) -> float:
        return max(1e-3, min(limit, self.remaining))


class Tracker:
    """Best original-feasible point seen, with its trace."""

    def __init__(self, inst: MiqcqpInstance, norm: NormalizedInstance, budget: Budget, horizon: float):
        self.inst, self.norm, self.budget = inst, norm, budget
        self.trace = IncumbentTrace(horizon=horizon, start=budget.start)
        self.x: Optional[np.ndarray] = None
        self.f = np.inf

    def offer(self, y) -> bool:
        """Offer a normalized point; keeps it when feasible for the original
        instance and better than the incumbent."""
        if y is None:
            return False
        x = self.norm.to_original(y)
        if not check_feasible(self.inst, x, 1e-6):
            return False
        f = objective_value(self.inst, x)
        if f < self.f:
            self.x, self.f = x, f
            self.trace.record(f, self.budget.now())
            return True
        return False

    def outcome(self, iterations: int, why: Termination, **info) -> PumpOutcome:
        return PumpOutcome(self.x, None if self.x is None else self.f, self.trace, iterations, why,
                           info)


class PeerSignal:
    """Mailbox between the two racing pumps."""

    def __init__(self):
        self.event = threading.Event()
        self.lock = threading.Lock()
        self.winner: Optional[str] = None

    def announce(self, name: str) -> None:
        with self.lock:
            if self.winner is None:
                self.winner = name
        self.event.set()

    @property
    def set(self) -> bool:
        return self.event.is_set()
