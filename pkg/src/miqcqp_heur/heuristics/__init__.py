"""Primal heuristics: rounding, fixed-point and projection pumps."""

from .common import Budget, PeerSignal, PumpConfig, PumpOutcome, Termination, Tracker
from .fixedpoint import (FixedPointResult, continuous_fixed_point, fixed_point_miqp, kkt_residual,
                         solve_fixed_integers)
from .flip import HeuristicError, flip_round, project_l1, random_flip, random_flip_project
from .projection import race_pumps, relaxing_projection, two_projection
from .propagate import Propagation, PropagationResult, domain_propagate, propagate, quadratic_range

__all__ = [
    "Budget", "FixedPointResult", "HeuristicError", "PeerSignal", "Propagation", "PropagationResult",
    "PumpConfig", "PumpOutcome", "Termination", "Tracker", "continuous_fixed_point",
    "domain_propagate", "fixed_point_miqp", "flip_round", "kkt_residual", "project_l1",
    "propagate", "quadratic_range", "race_pumps", "random_flip", "random_flip_project",
    "relaxing_projection", "solve_fixed_integers", "two_projection",
]
