"""Branch-and-bound over integer variables.

Node relaxations come from ``ConicRelaxation``. For convex models the tree
is exact. For nonconvex models the relaxation gives valid bounds while
leaves are solved locally, so only feasible incumbents are produced.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from typing import Optional

import numpy as np

from ..model import ModelIR
from .nlp import local_solve
from .relax import ConicRelaxation
from .types import (Deadline, FEAS_TOL, Goal, SolveRequest, SolveResult, Status, validated)

log = logging.getLogger(__name__)

INT_TOL = 1e-6
HEURISTIC_EVERY = 10


class _Search:
    def __init__(self, request: SolveRequest, nonconvex: bool):
        self.req = request
        self.model: ModelIR = request.model
        self.nonconvex = nonconvex
        self.relax = ConicRelaxation(self.model)
        self.deadline = Deadline(request.time_limit_s, request.cancel)
        self.rng = np.random.default_rng(request.seed)
        self.best_x: Optional[np.ndarray] = None
        self.best_f = np.inf
        self.cutoff = np.inf if request.cutoff is None else float(request.cutoff)
        self.nodes = 0
        self.unresolved = 0
        self.root_bound = -np.inf
        self.dfs = request.goal is Goal.FIRST_FEASIBLE
        self.tried: dict[bytes, bool] = {}

    # -- incumbents -------------------------------------------------------
    def threshold(self) -> float:
        return min(self.best_f, self.cutoff)

    def offer(self, x) -> bool:
        if x is None or self.model.violation(x) > FEAS_TOL:
            return False
        f = self.model.objective(x)
        if f < self.threshold() - 1e-12 * max(1.0, abs(f)):
            self.best_x, self.best_f = np.array(x, dtype=float), f
            return True
        return False

    def pruned(self, bound: float) -> bool:
        thr = self.threshold()
        if not (np.isfinite(bound) and np.isfinite(thr)):
            return bound >= thr
        return bound >= thr - 1e-9 * max(1.0, abs(thr))

    def done_early(self) -> bool:
        return self.req.goal is Goal.FIRST_FEASIBLE and self.best_x is not None

    # -- leaf handling ----------------------------------------------------
    def _starts(self, x, lo, up):
        yield x
        if not self.nonconvex:
            return
        flo = np.where(np.isfinite(lo), lo, np.minimum(up, 0.0) - 1.0)
        fup = np.where(np.isfinite(up), up, np.maximum(lo, 0.0) + 1.0)
        flo = np.where(np.isfinite(flo), flo, -1.0)
        fup = np.where(np.isfinite(fup), fup, 1.0)
        yield 0.5 * (flo + fup)
        yield self.rng.uniform(flo, fup)

    def polish(self, x, lo, up) -> bool:
        """Fix integers of ``x`` and complete the continuous block."""
        m = self.model
        xi = np.clip(np.round(x[m.integer]), lo[m.integer], up[m.integer])
        flo, fup = lo.copy(), up.copy()
        flo[m.integer] = xi
        fup[m.integer] = xi
        found = False
        if not self.nonconvex:
            r = self.relax.solve(flo, fup, self.deadline.remaining)
            if r.status == "optimal":
                z = r.x.copy()
                z[m.integer] = xi
                found = self.offer(z)
                if found or m.violation(z) <= 10 * FEAS_TOL:
                    return found
            elif r.status == "infeasible":
                return False
        fixed = np.full(m.n, np.nan)
        fixed[m.integer] = xi
        sub = m.with_bounds(flo, fup)
        for s in self._starts(np.where(m.integer, 0.0, x), flo, fup):
            if self.deadline.expired:
                break
            res = local_solve(sub, s, min(self.deadline.remaining, 10.0), fixed=fixed)
            if res.status.has_solution and self.offer(res.x):
                found = True
                if self.dfs:
                    break
        return found

    def try_assignment(self, x, lo, up) -> bool:
        """Polish the rounded integer assignment of ``x`` once per assignment."""
        m = self.model
        key = np.clip(np.round(x[m.integer]), lo[m.integer], up[m.integer]).tobytes()
        if key in self.tried:
            return self.tried[key]
        self.tried[key] = self.polish(x, lo, up)
        return self.tried[key]

    # -- main loop --------------------------------------------------------
    def run(self) -> SolveResult:
        m = self.model
        ws = self.req.warm_start
        if ws is not None and len(ws) == m.n:
            self.offer(np.asarray(ws, dtype=float))
            if self.done_early():
                return self.result(exhausted=False)
        tie = itertools.count()
        heap = []

        def push(bound, depth, lo, up):
            key = (-depth, bound) if self.dfs else (bound, depth)
            heapq.heappush(heap, (key, next(tie), bound, depth, lo, up))

        push(-np.inf, 0, m.lower.copy(), m.upper.copy())
        timed_out = False
        while heap:
            if self.deadline.expired or (self.req.node_limit is not None
                                         and self.nodes >= self.req.node_limit):
                timed_out = True
                break
            _, _, pbound, depth, lo, up = heapq.heappop(heap)
            if self.pruned(pbound):
                continue
            self.nodes += 1
            r = self.relax.solve(lo, up, max(self.deadline.remaining, 1e-3))
            if r.status == "infeasible":
                continue
            if r.status == "time":
                timed_out = True
                break
            if r.status == "optimal":
                bound, x = r.objective, r.x
            else:
                bound = -np.inf
                x = np.clip(np.where(np.isfinite(lo) & np.isfinite(up), 0.5 * (lo + up), 0.0), lo, up)
            if self.nodes == 1:
                self.root_bound = bound
            if self.pruned(bound):
                continue
            ints = np.flatnonzero(m.integer & (lo < up))
            frac = np.abs(x[ints] - np.round(x[ints])) if len(ints) else np.zeros(0)
            if self.nonconvex and len(ints) and (self.nodes == 1 or self.dfs
                                                 or self.nodes % HEURISTIC_EVERY == 0):
                self.try_assignment(x, lo, up)
                if self.done_early():
                    break
            if len(ints) == 0 or frac.max() <= INT_TOL:
                found = self.try_assignment(x, lo, up)
                if self.done_early():
                    break
                if not self.nonconvex:
                    continue
                if len(ints) == 0:
                    if not found:
                        self.unresolved += 1
                    continue
                # integral relaxation with unfixed integers: split the widest domain
                j = int(ints[np.argmax(up[ints] - lo[ints])])
                cut = float(np.clip(np.round(x[j]), lo[j], up[j]))
                if cut >= up[j]:
                    cut -= 1.0
                left_up, right_lo = up.copy(), lo.copy()
                left_up[j], right_lo[j] = cut, cut + 1.0
                push(bound, depth + 1, lo.copy(), left_up)
                push(bound, depth + 1, right_lo, up.copy())
                continue
            # most fractional, ties lowest index
            score = np.minimum(frac, 1.0 - frac)
            j = int(ints[np.flatnonzero(score >= score.max() - 1e-12)[0]])
            left_up, right_lo = up.copy(), lo.copy()
            left_up[j] = np.floor(x[j])
            right_lo[j] = np.ceil(x[j])
            children = [(lo.copy(), left_up), (right_lo, up.copy())]
            if self.dfs and x[j] - np.floor(x[j]) >= 0.5:
                children.reverse()  # dive toward the nearer integer first
            for clo, cup in children:
                push(bound, depth + 1, clo, cup)
        return self.result(exhausted=not timed_out and not heap)

    def result(self, exhausted: bool) -> SolveResult:
        t = self.deadline.elapsed
        if self.best_x is not None:
            status = Status.OPTIMAL if (exhausted and not self.nonconvex) else Status.FEASIBLE
            dual = self.best_f if (exhausted and not self.nonconvex) else self.root_bound
            res = SolveResult(status, self.best_x, self.best_f, dual, t, self.nodes, exhausted)
        elif exhausted and self.unresolved == 0:
            msg = "no point below the cutoff" if self.cutoff < np.inf else ""
            res = SolveResult(Status.INFEASIBLE, wall_time_s=t, nodes=self.nodes, exhausted=True,
                              message=msg)
        else:
            res = SolveResult(Status.TIME_LIMIT, wall_time_s=t, nodes=self.nodes,
                              exhausted=exhausted, message="no feasible point found")
        return validated(self.model, res)


def solve_convex(request: SolveRequest) -> SolveResult:
    """Branch-and-bound for a model tagged convex."""
    if not request.model.convex:
        return SolveResult(Status.ERROR, message="model is not tagged convex")
    return _Search(request, nonconvex=False).run()


def solve_nonconvex(request: SolveRequest) -> SolveResult:
    """Branch-and-bound with local leaf solves; incumbents are feasible but
    not certified optimal."""
    return _Search(request, nonconvex=True).run()
