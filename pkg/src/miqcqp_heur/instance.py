"""Problem data for bounded MIQCQPs and the basic operations on it.

An instance is

    min   x'Q0 x + a0'x + b0
    s.t.  x'Qk x + ak'x <= bk      k = 1..m1
          A x <= bA
          l <= x <= u
          x_j integer for j in I

with every ``Qk`` symmetric and every bound finite.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

INT_TOL = 1e-9


class InstanceError(ValueError):
    """Raised when instance data violates an invariant."""


@dataclass(frozen=True, eq=False)
class SymSparseMatrix:
    """Symmetric matrix stored as its upper triangle (row <= col)."""

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        if self.dim < 0:
            raise InstanceError("dim must be nonnegative")
        if not (len(self.rows) == len(self.cols) == len(self.vals)):
            raise InstanceError("entry arrays differ in length")
        if len(self.rows):
            if np.any(self.rows > self.cols):
                raise InstanceError("entries must satisfy row <= col")
            if self.rows.min() < 0 or self.cols.max() >= self.dim:
                raise InstanceError("entry index out of range")
            if not np.all(np.isfinite(self.vals)) or np.any(self.vals == 0):
                raise InstanceError("entries must be finite and nonzero")
            keys = self.rows.astype(np.int64) * max(self.dim, 1) + self.cols
            if len(np.unique(keys)) != len(keys):
                raise InstanceError("duplicate entries")

    @classmethod
    def from_entries(cls, dim: int, entries: Iterable[tuple[int, int, float]]) -> "SymSparseMatrix":
        """Build from (i, j, v) triples; (i, j) and (j, i) refer to the same
        entry, duplicates are summed and zeros dropped."""
        acc: dict[tuple[int, int], float] = {}
        for i, j, v in entries:
            i, j = int(i), int(j)
            if i > j:
                i, j = j, i
            v = float(v)
            if not np.isfinite(v):
                raise InstanceError(f"nonfinite coefficient at ({i}, {j})")
            acc[(i, j)] = acc.get((i, j), 0.0) + v
        keys = sorted(k for k, v in acc.items() if v != 0.0)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        vals = np.array([acc[k] for k in keys], dtype=float)
        return cls(dim, rows, cols, vals)

    @classmethod
    def from_dense(cls, M: np.ndarray, tol: float = 0.0) -> "SymSparseMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise InstanceError("matrix must be square")
        if not np.allclose(M, M.T, atol=1e-12, rtol=0):
            raise InstanceError("matrix must be symmetric")
        r, c = np.nonzero(np.triu(np.abs(M) > tol))
        return cls(M.shape[0], r.astype(np.int64), c.astype(np.int64), M[r, c].copy())

    @classmethod
    def zeros(cls, dim: int) -> "SymSparseMatrix":
        e = np.zeros(0, dtype=np.int64)
        return cls(dim, e, e.copy(), np.zeros(0))

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.vals)]

    @functools.cached_property
    def csr(self) -> sp.csr_matrix:
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.vals, self.vals[off]])
        return sp.csr_matrix((v, (r, c)), shape=(self.dim, self.dim))

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    @functools.cached_property
    def support(self) -> np.ndarray:
        """Sorted indices of rows with at least one nonzero."""
        return np.unique(np.concatenate([self.rows, self.cols]))

    def quad(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        w = np.where(self.rows == self.cols, 1.0, 2.0)
        return float(np.sum(w * self.vals * x[self.rows] * x[self.cols]))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ np.asarray(x, dtype=float)

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.dim)
        on = self.rows == self.cols
        d[self.rows[on]] = self.vals[on]
        return d

    def embed(self, dim: int) -> "SymSparseMatrix":
        if dim < self.dim:
            raise InstanceError("cannot shrink a matrix by embedding")
        return SymSparseMatrix(dim, self.rows, self.cols, self.vals)

    def scaled(self, c: float) -> "SymSparseMatrix":
        if c == 0:
            return SymSparseMatrix.zeros(self.dim)
        return SymSparseMatrix(self.dim, self.rows, self.cols, self.vals * c)

    def __eq__(self, other):
        if not isinstance(other, SymSparseMatrix):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.vals, other.vals))

    __hash__ = None

    def __repr__(self):
        return f"SymSparseMatrix(dim={self.dim}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class QuadraticRow:
    """``x'Qx + a'x`` with a right-hand side (constraint) or constant (objective)."""

    Q: SymSparseMatrix
    a: np.ndarray
    b: float

    def value(self, x: np.ndarray) -> float:
        return self.Q.quad(x) + float(self.a @ x)

    def __eq__(self, other):
        if not isinstance(other, QuadraticRow):
            return NotImplemented
        return self.Q == other.Q and np.array_equal(self.a, other.a) and self.b == other.b

    __hash__ = None


class ProblemClass(str, enum.Enum):
    MIBQP = "MIBQP"
    MIQP = "MIQP"
    MIQCP = "MIQCP"


def _as_csr(A, n) -> sp.csr_matrix:
    if A is None:
        return sp.csr_matrix((0, n))
    A = sp.csr_matrix(A, dtype=float)
    A.eliminate_zeros()
    A.sort_indices()
    return A


@dataclass(frozen=True, eq=False)
class MiqcqpInstance:
    n: int
    objective: QuadraticRow
    quad_constraints: tuple[QuadraticRow, ...]
    A: sp.csr_matrix
    b_A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray
    name: str = ""
    sense: str = "min"
    declared_type: str = ""
    var_names: Optional[tuple[str, ...]] = field(default=None)

    def __post_init__(self):
        n = self.n
        set_ = functools.partial(object.__setattr__, self)
        set_("quad_constraints", tuple(self.quad_constraints))
        set_("A", _as_csr(self.A, n))
        set_("b_A", np.asarray(self.b_A, dtype=float).reshape(-1))
        set_("lower", np.asarray(self.lower, dtype=float).copy())
        set_("upper", np.asarray(self.upper, dtype=float).copy())
        integer = np.asarray(self.integer)
        if integer.dtype != bool:
            mask = np.zeros(n, dtype=bool)
            mask[integer.astype(int)] = True
            integer = mask
        set_("integer", integer.copy())
        for arr in (self.lower, self.upper, self.integer, self.b_A, self.objective.a):
            arr.setflags(write=False)
        if self.sense not in ("min", "max"):
            raise InstanceError("sense must be 'min' or 'max'")
        if self.lower.shape != (n,) or self.upper.shape != (n,) or self.integer.shape != (n,):
            raise InstanceError("bound/integrality vectors must have length n")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise InstanceError("all bounds must be finite")
        if np.any(self.lower > self.upper):
            bad = int(np.argmax(self.lower > self.upper))
            raise InstanceError(f"lower > upper for variable {bad}")
        li, ui = self.lower[self.integer], self.upper[self.integer]
        if np.any(np.abs(li - np.round(li)) > INT_TOL) or np.any(np.abs(ui - np.round(ui)) > INT_TOL):
            raise InstanceError("integer variables need integral bounds")
        if self.A.shape != (len(self.b_A), n):
            raise InstanceError("A and b_A shapes disagree")
        for row in (self.objective, *self.quad_constraints):
            if row.Q.dim != n or row.a.shape != (n,):
                raise InstanceError("quadratic row dimensions must equal n")
            if not (np.all(np.isfinite(row.a)) and np.isfinite(row.b)):
                raise InstanceError("nonfinite coefficient")

    @property
    def m1(self) -> int:
        return len(self.quad_constraints)

    @property
    def m2(self) -> int:
        return self.A.shape[0]

    @functools.cached_property
    def binary(self) -> np.ndarray:
        return self.integer & (self.lower == 0) & (self.upper == 1)

    @property
    def continuous(self) -> np.ndarray:
        return ~self.integer

    @property
    def int_idx(self) -> np.ndarray:
        return np.flatnonzero(self.integer)

    def report_objective(self, internal_value: float) -> float:
        """Objective in the file's own sense (max problems are stored negated)."""
        return -internal_value if self.sense == "max" else internal_value

    def __eq__(self, other):
        """Structural equality (names and the declared type code are ignored)."""
        if not isinstance(other, MiqcqpInstance):
            return NotImplemented
        return (self.n == other.n and self.sense == other.sense
                and self.objective == other.objective
                and self.quad_constraints == other.quad_constraints
                and self.A.shape == other.A.shape and (self.A != other.A).nnz == 0
                and np.array_equal(self.b_A, other.b_A)
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper)
                and np.array_equal(self.integer, other.integer))

    __hash__ = None

    def __repr__(self):
        return (f"MiqcqpInstance(name={self.name!r}, n={self.n}, m1={self.m1}, "
                f"m2={self.m2}, |I|={int(self.integer.sum())})")


def make_instance(Q0, a0=None, b0=0.0, *, quad=(), A=None, b_A=None, lower, upper,
                  integer=(), name="", sense="min") -> MiqcqpInstance:
    """Convenience constructor from dense data.

    ``quad`` is a sequence of (Qk, ak, bk) for the rows ``x'Qk x + ak'x <= bk``.
    """
    Q0 = np.atleast_2d(np.asarray(Q0, dtype=float))
    n = Q0.shape[0]
    a0 = np.zeros(n) if a0 is None else np.asarray(a0, dtype=float)
    rows = tuple(QuadraticRow(SymSparseMatrix.from_dense(Qk), np.asarray(ak, dtype=float), float(bk))
                 for Qk, ak, bk in quad)
    if A is None:
        A, b_A = sp.csr_matrix((0, n)), np.zeros(0)
    return MiqcqpInstance(
        n=n, objective=QuadraticRow(SymSparseMatrix.from_dense(Q0), a0, float(b0)),
        quad_constraints=rows, A=sp.csr_matrix(np.atleast_2d(A)) if not sp.issparse(A) else A,
        b_A=np.asarray(b_A, dtype=float), lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float), integer=np.asarray(integer),
        name=name, sense=sense)


def classify(inst: MiqcqpInstance) -> ProblemClass:
    if inst.m1 >= 1:
        return ProblemClass.MIQCP
    if inst.m2 >= 1:
        return ProblemClass.MIQP
    return ProblemClass.MIBQP


def objective_value(inst: MiqcqpInstance, x) -> float:
    x = np.asarray(x, dtype=float)
    return inst.objective.value(x) + inst.objective.b


def violations(inst: MiqcqpInstance, x) -> dict[str, float]:
    """Largest violation per constraint family (0 when satisfied)."""
    x = np.asarray(x, dtype=float)
    quad = max((max(0.0, r.value(x) - r.b) for r in inst.quad_constraints), default=0.0)
    lin = float(np.max(np.maximum(inst.A @ x - inst.b_A, 0.0), initial=0.0))
    bnd = float(np.max(np.maximum(np.maximum(inst.lower - x, x - inst.upper), 0.0), initial=0.0))
    xi = x[inst.integer]
    integ = float(np.max(np.abs(xi - np.round(xi)), initial=0.0))
    return {"quadratic": quad, "linear": lin, "bounds": bnd, "integrality": integ}


def evaluate(inst: MiqcqpInstance, x) -> tuple[float, float]:
    """Return ``(objective, max_violation)`` at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n,):
        raise InstanceError(f"point has length {x.shape}, expected {inst.n}")
    return objective_value(inst, x), max(violations(inst, x).values())


def check_feasible(inst: MiqcqpInstance, x, tol: float = 1e-6) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return evaluate(inst, x)[1] <= tol


@dataclass(frozen=True, eq=False)
class NormalizedInstance:
    """Instance with zero lower bounds; original ``x = y + shift``."""

    inst: MiqcqpInstance
    shift: np.ndarray

    def to_original(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) + self.shift

    def from_original(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.shift


def _shift_row(row: QuadraticRow, l: np.ndarray) -> tuple[np.ndarray, float]:
    """Linear part and constant of ``row`` after substituting ``x = y + l``."""
    a = row.a + 2.0 * row.Q.matvec(l)
    const = row.Q.quad(l) + float(row.a @ l)
    return a, const


def normalize(inst: MiqcqpInstance) -> NormalizedInstance:
    l = np.array(inst.lower, dtype=float)
    if not np.any(l):
        return NormalizedInstance(inst, np.zeros(inst.n))
    a0, c0 = _shift_row(inst.objective, l)
    obj = QuadraticRow(inst.objective.Q, a0, inst.objective.b + c0)
    rows = []
    for r in inst.quad_constraints:
        ak, ck = _shift_row(r, l)
        rows.append(QuadraticRow(r.Q, ak, r.b - ck))
    b_A = inst.b_A - inst.A @ l
    new = MiqcqpInstance(
        n=inst.n, objective=obj, quad_constraints=tuple(rows), A=inst.A, b_A=b_A,
        lower=np.zeros(inst.n), upper=inst.upper - l, integer=inst.integer,
        name=inst.name, sense=inst.sense, declared_type=inst.declared_type,
        var_names=inst.var_names)
    return NormalizedInstance(new, l)


def instance_to_json(inst: MiqcqpInstance) -> dict:
    """Plain-data dump for debugging (``--dump-json``)."""
    def row(r: QuadraticRow, key: str) -> dict:
        return {"Q": r.Q.entries(), "a": r.a.tolist(), key: r.b}

    A = inst.A.tocoo()
    return {
        "name": inst.name,
        "sense": inst.sense,
        "declared_type": inst.declared_type,
        "class": classify(inst).value,
        "n": inst.n,
        "m1": inst.m1,
        "m2": inst.m2,
        "objective": row(inst.objective, "constant"),
        "quad_constraints": [row(r, "rhs") for r in inst.quad_constraints],
        "A": [[int(i), int(j), float(v)] for i, j, v in zip(A.row, A.col, A.data)],
        "b_A": inst.b_A.tolist(),
        "lower": inst.lower.tolist(),
        "upper": inst.upper.tolist(),
        "integer": np.flatnonzero(inst.integer).tolist(),
    }


def with_bounds(inst: MiqcqpInstance, lower: Sequence[float], upper: Sequence[float]) -> MiqcqpInstance:
    return MiqcqpInstance(
        n=inst.n, objective=inst.objective, quad_constraints=inst.quad_constraints,
        A=inst.A, b_A=inst.b_A, lower=np.asarray(lower, float), upper=np.asarray(upper, float),
        integer=inst.integer, name=inst.name, sense=inst.sense,
        declared_type=inst.declared_type, var_names=inst.var_names)
