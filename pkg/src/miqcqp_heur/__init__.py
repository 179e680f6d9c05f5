"""Primal heuristics for nonconvex mixed-integer quadratically constrained
quadratic programs."""

from .instance import (MiqcqpInstance, ProblemClass, QuadraticRow, SymSparseMatrix, check_feasible,
                       classify, make_instance, normalize, objective_value)
from .pipeline import RunConfig, RunResult, solve_instance
from .qplib import emit_qplib, parse_qplib, read_qplib, write_qplib

__version__ = "0.1.0"

__all__ = [
    "MiqcqpInstance", "ProblemClass", "QuadraticRow", "RunConfig", "RunResult", "SymSparseMatrix",
    "check_feasible", "classify", "emit_qplib", "make_instance", "normalize", "objective_value",
    "parse_qplib", "read_qplib", "solve_instance", "write_qplib",
]
