"""Parallel local branching around a feasible incumbent.

The neighbourhood ``1 <= Delta(x, xbar) <= k_total`` is split into disjoint
Hamming-distance windows solved concurrently. An improvement moves the center
and excludes the old neighbourhood with ``Delta(x, xbar_old) >= k_total + 1``.
When a node yields nothing, the reverse constraint ``Delta_r <= k_total``
searches the points farthest from the incumbent.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .convexify import add_lbc, add_rlbc, binary_expand, default_binaries, delta, lift
from .heuristics.common import Budget
from .instance import MiqcqpInstance, NormalizedInstance, check_feasible, normalize, objective_value
from .metrics import IncumbentTrace
from .model import ModelError, ModelIR, original_model
from .solver.backend import InternalBackend
from .solver.types import CancelToken, Goal, SolveRequest, SolveResult, Status

log = logging.getLogger(__name__)

DEFAULT_RANGES = ((1, 7), (8, 13), (14, 17), (18, 19))
MIN_SUBPROBLEM_S = 5.0
MAX_SUBPROBLEM_S = 30.0
IMPROVE_RTOL = 1e-9
DETERMINISTIC_NODES = 400  # per subproblem in deterministic mode


class LocalBranchError(ValueError):
    pass


class Mode(str, enum.Enum):
    LBC = "LBC"
    RLBC = "RLBC"


def halve_range(r: tuple[int, int]) -> list[tuple[int, int]]:
    lo, hi = r
    if hi <= lo:
        return [r]
    mid = (lo + hi) // 2
    return [(lo, mid), (mid + 1, hi)]


@dataclass(frozen=True)
class PartitionScheme:
    ranges: tuple[tuple[int, int], ...] = DEFAULT_RANGES

    def __post_init__(self):
        rs = tuple((int(a), int(b)) for a, b in self.ranges)
        if not rs:
            raise LocalBranchError("a partition scheme needs at least one range")
        if rs[0][0] != 1:
            raise LocalBranchError("ranges must start at distance 1")
        for (a, b), nxt in zip(rs, rs[1:] + ((None, None),)):
            if a > b:
                raise LocalBranchError(f"empty range ({a}, {b})")
            if nxt[0] is not None and nxt[0] != b + 1:
                raise LocalBranchError("ranges must be contiguous and ascending")
        object.__setattr__(self, "ranges", rs)

    @property
    def k_total(self) -> int:
        return self.ranges[-1][1]

    def truncate(self, n_binaries: int) -> "PartitionScheme":
        """Drop ranges starting beyond ``n_binaries`` and clip the last one."""
        if n_binaries < 1:
            raise LocalBranchError("no binary variables to branch on")
        kept = [(a, min(b, n_binaries)) for a, b in self.ranges if a <= n_binaries]
        return PartitionScheme(tuple(kept))

    def halve(self) -> "PartitionScheme":
        return PartitionScheme(tuple(r for rng in self.ranges for r in halve_range(rng)))


@dataclass
class BranchNode:
    base_model: ModelIR
    incumbent: np.ndarray  # model space
    objective: float
    depth: int = 0
    mode: Mode = Mode.LBC


@dataclass
class SubproblemOutcome:
    window: tuple[int, int]
    index: int
    result: SolveResult
    x: Optional[np.ndarray] = None  # accepted improving model point
    objective: Optional[float] = None
    wall_time: float = 0.0

    @property
    def exhausted(self) -> bool:
        return self.result.status is Status.INFEASIBLE and self.result.exhausted

    @property
    def timed_out(self) -> bool:
        return not self.exhausted and self.x is None


@dataclass
class LocalBranchResult:
    x: np.ndarray
    objective: float
    trace: IncumbentTrace
    depth: int = 0
    subproblems: int = 0
    rlbc_rounds: int = 0
    resplits: int = 0
    exclusion_violations: int = 0
    log: list = field(default_factory=list)


def base_model(norm: NormalizedInstance) -> ModelIR:
    """Original model plus binary expansion bits of every general integer."""
    inst = norm.inst
    m = original_model(inst)
    b = m.to_builder()
    for i in np.flatnonzero(inst.integer & (inst.upper - inst.lower > 1)):
        exp = binary_expand(int(i), inst.lower[i], inst.upper[i])
        bits = [b.add_var(f"t_{i}_{h}", 0, 1, "binary", ("bit", int(i), h, exp.offset))
                for h in range(exp.nbits)]
        row = {int(i): 1.0}
        for h, t in enumerate(bits):
            row[t] = -(2.0 ** h)
        b.add_linear(row, "=", exp.offset)
    return b.build(convex=m.convex)


def partition_neighborhood(scheme: PartitionScheme, xbar, model: ModelIR, B=None) -> list[ModelIR]:
    """One model per window with both sides of the distance constraint."""
    B = default_binaries(model) if B is None else np.asarray(B, dtype=int)
    if len(B) == 0:
        raise LocalBranchError("no binary variables to branch on")
    xb = np.round(np.asarray(xbar, dtype=float)[B])
    return [add_lbc(model, xb, lo, hi, B) for lo, hi in scheme.truncate(len(B)).ranges]


def solve_subproblem(node: BranchNode, window: tuple[int, int], time_limit_s: float, *,
                     inst: MiqcqpInstance, norm: NormalizedInstance, B, backend=None, seed: int = 0,
                     cancel: Optional[CancelToken] = None, index: int = 0,
                     reverse: bool = False, node_limit: Optional[int] = None) -> SubproblemOutcome:
    """Solve one window (or the reverse neighbourhood) and validate the result
    against the original instance."""
    backend = backend or InternalBackend()
    xb = np.round(node.incumbent[B])
    t0 = time.perf_counter()
    if reverse:
        model = add_rlbc(node.base_model, xb, window[1], B)
        inside = len(B) - delta(node.incumbent[B], xb) <= window[1]
    else:
        model = add_lbc(node.base_model, xb, window[0], window[1], B)
        inside = window[0] <= 0 <= window[1]
    cutoff = node.objective - IMPROVE_RTOL * max(1.0, abs(node.objective))
    req = SolveRequest(model, max(time_limit_s, 1e-3), Goal.BEST_WITHIN_LIMIT,
                       warm_start=node.incumbent if inside else None, seed=seed, cutoff=cutoff,
                       cancel=cancel, node_limit=node_limit)
    try:
        res = backend.solve(req)
    except Exception as exc:  # backend failures count as no improvement
        res = SolveResult(Status.ERROR, message=str(exc))
    out = SubproblemOutcome(window, index, res, wall_time=time.perf_counter() - t0)
    if res.status.has_solution and res.x is not None:
        y = res.x[model.original_index(inst.n)]
        x = norm.to_original(y)
        f = objective_value(inst, x)
        if check_feasible(inst, x, 1e-6) and f < cutoff:
            out.x, out.objective = lift(node.base_model, y), f
    return out


def _sub_time(budget: Budget) -> float:
    return min(budget.remaining, max(MIN_SUBPROBLEM_S, min(MAX_SUBPROBLEM_S, budget.remaining / 6.0)))


def run_parallel_lb(inst: MiqcqpInstance, x0, budget_s: float, workers: int = 4,
                    scheme: Optional[PartitionScheme] = None, deterministic: bool = False,
                    eager_cut: bool = False, backend=None, seed: int = 0,
                    start: Optional[float] = None) -> LocalBranchResult:
    """Refine the feasible point ``x0`` (original space) until the budget ends
    or no neighbourhood improves. The result's trace starts with ``x0``."""
    if workers < 1:
        raise LocalBranchError("workers must be at least 1")
    scheme = scheme or PartitionScheme()
    eager_cut = eager_cut and not deterministic
    x0 = np.asarray(x0, dtype=float)
    if not check_feasible(inst, x0, 1e-6):
        raise LocalBranchError("the starting point is not feasible")
    budget = Budget(budget_s, start)
    norm = normalize(inst)
    f0 = objective_value(inst, x0)
    trace = IncumbentTrace(horizon=budget_s if start is None else budget.now() + budget_s,
                           start=budget.start)
    trace.record(f0, 0.0 if start is None else budget.now())
    model = base_model(norm)
    B = default_binaries(model)
    node = BranchNode(model, lift(model, norm.from_original(x0)), f0)
    result = LocalBranchResult(x0.copy(), f0, trace)
    if len(B) == 0:
        result.log.append("no binaries; local branching skipped")
        return result
    scheme = scheme.truncate(len(B))
    k = scheme.k_total
    centers: list[np.ndarray] = []  # branched-away centers
    # deterministic runs cap subproblems by nodes so the outcome does not
    # depend on thread scheduling; the global budget still applies
    node_limit = DETERMINISTIC_NODES if deterministic else None

    def sub_time() -> float:
        return budget.remaining if deterministic else _sub_time(budget)
    lock = threading.Lock()

    def accept(out: SubproblemOutcome) -> None:
        for c in centers:
            if delta(out.x[B], c) <= k:
                result.exclusion_violations += 1
                log.warning("returned point lies inside an excluded neighbourhood")

    def solve_windows(windows: Sequence[tuple[int, int]]) -> list[SubproblemOutcome]:
        tl = sub_time()
        token = CancelToken()
        best = {"f": node.objective}

        def one(idx_window):
            idx, w = idx_window
            out = solve_subproblem(node, w, tl, inst=inst, norm=norm, B=B, backend=backend,
                                   seed=seed, cancel=token, index=idx, node_limit=node_limit)
            if out.x is not None and eager_cut:
                with lock:
                    if out.objective < best["f"]:
                        best["f"] = out.objective
                        token.cancel()
            return out

        jobs = list(enumerate(windows))
        if workers == 1 or len(jobs) == 1:
            outs = [one(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
                outs = list(pool.map(one, jobs))
        result.subproblems += len(outs)
        return outs

    def move(out: SubproblemOutcome, branch: bool) -> None:
        nonlocal node
        accept(out)
        base = node.base_model
        if branch:
            centers.append(np.round(node.incumbent[B]))
            if k + 1 <= len(B):
                base = add_lbc(base, np.round(node.incumbent[B]), k + 1, len(B), B)
            else:
                base = None  # every other binary vector was inside the windows
        x = norm.to_original(out.x[model.original_index(inst.n)])
        trace.record(out.objective, budget.now())
        result.x, result.objective = x, out.objective
        node = BranchNode(base, out.x, out.objective, node.depth + 1, Mode.LBC) if base is not None else None
        result.depth += 1

    def best_of(outs: Sequence[SubproblemOutcome]) -> Optional[SubproblemOutcome]:
        good = [o for o in outs if o.x is not None]
        return min(good, key=lambda o: (o.objective, o.index)) if good else None

    while node is not None and not budget.expired:
        if node.mode is Mode.LBC:
            outs = solve_windows(scheme.ranges)
            win = best_of(outs)
            if win is None and not budget.expired:
                timed = [o.window for o in outs if o.timed_out]
                if timed:
                    result.resplits += 1
                    finer = [r for w in timed for r in halve_range(w)]
                    outs = solve_windows(finer)
                    win = best_of(outs)
            if win is not None:
                move(win, branch=True)
                continue
            node.mode = Mode.RLBC
            result.log.append(f"depth {node.depth}: no improvement, reverse neighbourhood")
            continue
        # reverse local branching round
        result.rlbc_rounds += 1
        try:
            out = solve_subproblem(node, (0, k), sub_time(), inst=inst, norm=norm, B=B,
                                   backend=backend, seed=seed, reverse=True, node_limit=node_limit)
        except ModelError:
            break
        result.subproblems += 1
        if out.x is None:
            break
        move(out, branch=False)
    return result
