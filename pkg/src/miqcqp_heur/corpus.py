"""Random instance generators with a planted feasible point, and the fixed
40-instance desk corpus used by the benchmarks and acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .instance import MiqcqpInstance, ProblemClass, classify, make_instance


@dataclass(frozen=True)
class Shape:
    n_bin: int
    n_int: int = 0
    n_cont: int = 2
    m1: int = 0
    m2: int = 0
    int_range: int = 4
    cont_width: float = 4.0
    density: float = 0.6
    shifted_lower: bool = False


@dataclass
class CorpusEntry:
    name: str
    instance: MiqcqpInstance
    planted: np.ndarray
    small: bool  # within the brute-force size guard

    @property
    def problem_class(self) -> ProblemClass:
        return classify(self.instance)


def _sym(rng: np.random.Generator, n: int, density: float, scale: float = 1.0) -> np.ndarray:
    M = rng.normal(size=(n, n)) * (rng.random((n, n)) < density)
    M = np.triu(M)
    M = M + np.triu(M, 1).T
    return np.round(scale * M, 3)


def _bounds(rng: np.random.Generator, shape: Shape):
    n = shape.n_bin + shape.n_int + shape.n_cont
    lower = np.zeros(n)
    upper = np.ones(n)
    ints = np.arange(shape.n_bin, shape.n_bin + shape.n_int)
    cont = np.arange(shape.n_bin + shape.n_int, n)
    upper[ints] = rng.integers(2, shape.int_range + 1, size=len(ints))
    upper[cont] = shape.cont_width
    if shape.shifted_lower:
        off = rng.integers(-2, 3, size=len(ints))
        lower[ints] += off
        upper[ints] += off
        c_off = np.round(rng.uniform(-2, 1, size=len(cont)), 2)
        lower[cont] += c_off
        upper[cont] += c_off
    return n, lower, upper, np.arange(shape.n_bin + shape.n_int)


def _planted(rng: np.random.Generator, lower, upper, integer) -> np.ndarray:
    x = rng.uniform(lower, upper)
    x[integer] = np.array([rng.integers(int(lower[i]), int(upper[i]) + 1) for i in integer], dtype=float)
    return x


def generate(rng: np.random.Generator, shape: Shape, name: str = "") -> tuple[MiqcqpInstance, np.ndarray]:
    """Random nonconvex instance with ``shape`` and a planted feasible point.

    Linear rows and quadratic rows are made feasible at the planted point by
    setting their right-hand side to the activity plus a random slack.
    """
    n, lower, upper, integer = _bounds(rng, shape)
    xp = _planted(rng, lower, upper, integer)
    Q0 = _sym(rng, n, shape.density)
    a0 = np.round(rng.normal(size=n) * 2.0, 3)
    quad = []
    for _ in range(shape.m1):
        Qk = _sym(rng, n, shape.density, 0.5)
        ak = np.round(rng.normal(size=n), 3)
        act = float(xp @ Qk @ xp + ak @ xp)
        quad.append((Qk, ak, round(act + rng.uniform(0.0, 1.0), 6) + 1e-6))
    A = b_A = None
    if shape.m2:
        A = np.round(rng.normal(size=(shape.m2, n)), 3)
        A[rng.random(A.shape) < 0.3] = 0.0
        b_A = np.round(A @ xp + rng.uniform(0.0, 1.0, size=shape.m2), 6) + 1e-6
    inst = make_instance(Q0, a0, 0.0, quad=quad, A=A, b_A=b_A, lower=lower, upper=upper,
                         integer=integer, name=name)
    return inst, xp


def small_enough(inst: MiqcqpInstance) -> bool:
    """Within the exhaustive solver's guard (integers, ranges, continuous count)."""
    ints = np.flatnonzero(inst.integer)
    ranges = inst.upper[ints] - inst.lower[ints] + 1
    return len(ints) <= 16 and bool(np.all(ranges <= 8)) and int((~inst.integer).sum()) <= 3 \
        and float(np.prod(ranges)) * 21.0 ** int((~inst.integer).sum()) <= 5e6


SMALL_SHAPES = [
    Shape(n_bin=6, n_cont=2),
    Shape(n_bin=5, n_int=1, n_cont=2, shifted_lower=True),
    Shape(n_bin=4, n_int=2, n_cont=1, int_range=4),
    Shape(n_bin=6, n_cont=2, m2=3),
    Shape(n_bin=5, n_int=1, n_cont=2, m2=2, shifted_lower=True),
    Shape(n_bin=4, n_int=2, n_cont=2, m2=3),
    Shape(n_bin=6, n_cont=2, m1=1),
    Shape(n_bin=5, n_int=1, n_cont=2, m1=2, m2=1),
    Shape(n_bin=4, n_int=1, n_cont=2, m1=1, m2=2, shifted_lower=True),
    Shape(n_bin=6, n_cont=3, m1=2),
]

LARGE_SHAPES = [
    Shape(n_bin=16, n_cont=4),
    Shape(n_bin=12, n_int=3, n_cont=5, int_range=10, shifted_lower=True),
    Shape(n_bin=18, n_cont=4, m2=5),
    Shape(n_bin=14, n_int=2, n_cont=4, m2=4, int_range=9),
    Shape(n_bin=16, n_cont=5, m1=2, m2=3),
    Shape(n_bin=12, n_int=2, n_cont=4, m1=2, m2=2, shifted_lower=True),
    Shape(n_bin=20, n_cont=4, m1=1),
    Shape(n_bin=14, n_cont=6, m1=3, m2=2),
    Shape(n_bin=10, n_int=2, n_cont=4, m2=3),
    Shape(n_bin=22, n_cont=3, m2=4),
]


def desk_corpus(seed: int = 2024, size: int = 40) -> list[CorpusEntry]:
    """Fixed corpus: the first half fits the brute-force guard, the second
    half is larger. Every problem class occurs in both halves."""
    rng = np.random.default_rng(seed)
    half = size // 2
    out = []
    for k in range(size):
        shapes = SMALL_SHAPES if k < half else LARGE_SHAPES
        shape = shapes[k % len(shapes)]
        inst, xp = generate(rng, shape, name=f"desk_{k:02d}")
        out.append(CorpusEntry(inst.name, inst, xp, small_enough(inst)))
    return out


def random_instance(seed: int, problem_class: Optional[ProblemClass] = None, n_bin: int = 4,
                    n_int: int = 0, n_cont: int = 2, **kw) -> tuple[MiqcqpInstance, np.ndarray]:
    """Convenience wrapper for tests: one instance of the requested class."""
    rng = np.random.default_rng(seed)
    m1 = kw.pop("m1", 1 if problem_class is ProblemClass.MIQCP else 0)
    m2 = kw.pop("m2", 2 if problem_class is ProblemClass.MIQP else 0)
    return generate(rng, Shape(n_bin, n_int, n_cont, m1, m2, **kw), name=f"rand_{seed}")
