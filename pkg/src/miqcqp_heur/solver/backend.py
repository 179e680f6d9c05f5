"""Backend objects dispatching requests to the internal or external solvers."""

from __future__ import annotations

from typing import Optional, Sequence

from .bnb import solve_convex, solve_nonconvex
from .external import solve_external
from .types import SolveRequest, SolveResult, Status, validated

CAPABILITIES = frozenset({"convex-MIQCQP", "MILP", "nonconvex-MIQCQP", "continuous-convex", "local-NLP"})


class InternalBackend:
    capabilities = CAPABILITIES

    def solve(self, request: SolveRequest) -> SolveResult:
        try:
            if request.model.convex:
                return solve_convex(request)
            return solve_nonconvex(request)
        except Exception as exc:  # surfaced as a status, never raised to workers
            return SolveResult(Status.ERROR, message=f"{type(exc).__name__}: {exc}")


class ExternalBackend:
    capabilities = CAPABILITIES

    def __init__(self, command: Optional[Sequence[str]] = None):
        self.command = command

    def solve(self, request: SolveRequest) -> SolveResult:
        return validated(request.model, solve_external(request, self.command))


def make_backend(name: str = "internal"):
    if name == "internal":
        return InternalBackend()
    if name == "external":
        return ExternalBackend()
    raise ValueError(f"unknown backend {name!r}")
