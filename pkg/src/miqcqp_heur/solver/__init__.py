"""Solver backends: branch-and-bound, local NLP, brute force and external adapter."""

from .backend import ExternalBackend, InternalBackend, make_backend
from .bnb import solve_convex, solve_nonconvex
from .brute import brute_force
from .external import solve_external
from .nlp import local_solve, solve_local_nlp
from .types import CancelToken, Goal, SolveRequest, SolveResult, Status

__all__ = [
    "CancelToken", "ExternalBackend", "Goal", "InternalBackend", "SolveRequest", "SolveResult",
    "Status", "brute_force", "local_solve", "make_backend", "solve_convex", "solve_external",
    "solve_local_nlp", "solve_nonconvex",
]
