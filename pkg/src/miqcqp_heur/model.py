"""Neutral optimization-model representation shared by builders and backends.

A model is

    min   x'Qx + c'x + const
    s.t.  A x (<=, =, >=) b          linear rows
          x'Qk x + ak'x <= bk         quadratic rows
          lower <= x <= upper         (bounds may be infinite)
          x_j integral for integer/binary kinds

Every variable carries an origin tag describing where it came from:

    ("x", i)                 original variable i
    ("bit", i, h, offset)    bit h of the expansion of integer variable i
    ("X", i)                 auxiliary standing for x_i**2
    ("H", i, h1, h2)         product of bits h1 and h2 of variable i
    ("delta", i)             deficiency slack max(0, uhat_i - x_i)
    ("s", k)                 slack of quadratic row k
    ("l1", j, ref)           distance |x_j - ref|
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .instance import MiqcqpInstance, SymSparseMatrix

SCHEMA = "miqcqp-model/1"
KINDS = ("continuous", "integer", "binary")
SENSES = ("<=", "=", ">=")


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadConstraint:
    Q: SymSparseMatrix
    a: np.ndarray
    rhs: float


@dataclass(frozen=True, eq=False)
class ModelIR:
    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    kinds: tuple[str, ...]
    origins: tuple[tuple, ...]
    A: sp.csr_matrix
    senses: tuple[str, ...]
    rhs: np.ndarray
    quad: tuple[QuadConstraint, ...]
    obj_Q: SymSparseMatrix
    obj_c: np.ndarray
    obj_const: float = 0.0
    convex: bool = False
    name: str = ""

    def __post_init__(self):
        n = len(self.names)
        if not (len(self.lower) == len(self.upper) == len(self.kinds) == len(self.origins) == n):
            raise ModelError("variable arrays differ in length")
        if any(k not in KINDS for k in self.kinds):
            raise ModelError("unknown variable kind")
        if any(s not in SENSES for s in self.senses):
            raise ModelError("unknown constraint sense")
        if self.A.shape != (len(self.senses), n) or len(self.rhs) != len(self.senses):
            raise ModelError("linear constraint shapes disagree")
        if self.obj_Q.dim != n or len(self.obj_c) != n:
            raise ModelError("objective dimension mismatch")
        for q in self.quad:
            if q.Q.dim != n or len(q.a) != n:
                raise ModelError("quadratic row dimension mismatch")
        if np.any(self.lower > self.upper):
            raise ModelError("lower bound above upper bound")

    @property
    def n(self) -> int:
        return len(self.names)

    @functools.cached_property
    def integer(self) -> np.ndarray:
        return np.array([k != "continuous" for k in self.kinds], dtype=bool)

    @functools.cached_property
    def index_of(self) -> dict:
        return {o: j for j, o in enumerate(self.origins)}

    def vars_with(self, tag: str) -> np.ndarray:
        return np.array([j for j, o in enumerate(self.origins) if o[0] == tag], dtype=int)

    def original_index(self, n_orig: int) -> np.ndarray:
        """Model positions of the original variables ``("x", 0..n_orig-1)``."""
        pos = self.index_of
        return np.array([pos[("x", i)] for i in range(n_orig)], dtype=int)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return self.obj_Q.quad(x) + float(self.obj_c @ x) + self.obj_const

    def violation(self, x, integrality: bool = True) -> float:
        return max(self.violations(x, integrality).values())

    def violations(self, x, integrality: bool = True) -> dict[str, float]:
        x = np.asarray(x, dtype=float)
        act = self.A @ x - self.rhs if self.A.shape[0] else np.zeros(0)
        sense = np.array(self.senses)
        lin = np.where(sense == "<=", act, np.where(sense == ">=", -act, np.abs(act)))
        quad = [q.Q.quad(x) + float(q.a @ x) - q.rhs for q in self.quad]
        bnd = np.maximum(self.lower - x, x - self.upper)
        out = {
            "linear": float(np.max(lin, initial=0.0)),
            "quadratic": max(max(quad, default=0.0), 0.0),
            "bounds": float(np.max(bnd, initial=0.0)),
            "integrality": 0.0,
        }
        if integrality and self.integer.any():
            xi = x[self.integer]
            out["integrality"] = float(np.max(np.abs(xi - np.round(xi))))
        out["linear"] = max(out["linear"], 0.0)
        out["bounds"] = max(out["bounds"], 0.0)
        return out

    def with_bounds(self, lower, upper) -> "ModelIR":
        return replace(self, lower=np.asarray(lower, float), upper=np.asarray(upper, float))

    def fix(self, mask, values) -> "ModelIR":
        """Fix ``x[mask] = values[mask]``."""
        lo, up = self.lower.copy(), self.upper.copy()
        mask = np.asarray(mask, dtype=bool)
        v = np.asarray(values, dtype=float)
        lo[mask] = v[mask]
        up[mask] = v[mask]
        return self.with_bounds(lo, up)

    def fix_integers(self, x) -> "ModelIR":
        return self.fix(self.integer, np.round(np.asarray(x, dtype=float)))

    def to_builder(self) -> "ModelBuilder":
        b = ModelBuilder(self.name)
        for j in range(self.n):
            b.add_var(self.names[j], self.lower[j], self.upper[j], self.kinds[j], self.origins[j])
        A = self.A.tocsr()
        for r in range(A.shape[0]):
            s, e = A.indptr[r], A.indptr[r + 1]
            b.add_linear(dict(zip(A.indices[s:e].tolist(), A.data[s:e].tolist())),
                         self.senses[r], float(self.rhs[r]))
        for q in self.quad:
            nz = np.flatnonzero(q.a)
            b.add_quadratic(q.Q.entries(), dict(zip(nz.tolist(), q.a[nz].tolist())), q.rhs)
        nz = np.flatnonzero(self.obj_c)
        b.set_objective(self.obj_Q.entries(), dict(zip(nz.tolist(), self.obj_c[nz].tolist())),
                        self.obj_const)
        return b


class ModelBuilder:
    """Mutable accumulator producing an immutable ``ModelIR``."""

    def __init__(self, name: str = ""):
        self.name = name
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.kinds: list[str] = []
        self.origins: list[tuple] = []
        self._lin: list[tuple[dict, str, float]] = []
        self._quad: list[tuple[list, dict, float]] = []
        self._obj: tuple[list, dict, float] = ([], {}, 0.0)

    @property
    def n(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lower: float, upper: float, kind: str = "continuous",
                origin: tuple = ()) -> int:
        if kind not in KINDS:
            raise ModelError(f"unknown kind {kind!r}")
        self.names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.kinds.append(kind)
        self.origins.append(tuple(origin) if origin else ("aux", len(self.names) - 1))
        return len(self.names) - 1

    def add_linear(self, coefs: dict, sense: str, rhs: float) -> int:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        self._lin.append(({int(j): float(v) for j, v in coefs.items() if v != 0}, sense, float(rhs)))
        return len(self._lin) - 1

    def add_quadratic(self, entries: Iterable, coefs: dict, rhs: float) -> int:
        self._quad.append((list(entries), {int(j): float(v) for j, v in coefs.items() if v != 0},
                           float(rhs)))
        return len(self._quad) - 1

    def set_objective(self, entries: Iterable = (), coefs: Optional[dict] = None, const: float = 0.0):
        self._obj = (list(entries), dict(coefs or {}), float(const))

    def build(self, convex: bool = False) -> ModelIR:
        n = self.n

        def dense(coefs: dict) -> np.ndarray:
            v = np.zeros(n)
            for j, c in coefs.items():
                v[j] += c
            return v

        r, c, v = [], [], []
        for k, (coefs, _, _) in enumerate(self._lin):
            for j, val in coefs.items():
                r.append(k)
                c.append(j)
                v.append(val)
        A = sp.csr_matrix((v, (r, c)), shape=(len(self._lin), n))
        A.sum_duplicates()
        quad = tuple(QuadConstraint(SymSparseMatrix.from_entries(n, e), dense(a), rhs)
                     for e, a, rhs in self._quad)
        oe, oc, const = self._obj
        return ModelIR(
            names=tuple(self.names), lower=np.array(self.lower, dtype=float),
            upper=np.array(self.upper, dtype=float), kinds=tuple(self.kinds),
            origins=tuple(self.origins), A=A, senses=tuple(s for _, s, _ in self._lin),
            rhs=np.array([b for _, _, b in self._lin], dtype=float), quad=quad,
            obj_Q=SymSparseMatrix.from_entries(n, oe), obj_c=dense(oc), obj_const=const,
            convex=convex, name=self.name)


def _is_psd(Q: SymSparseMatrix, tol: float = 1e-9) -> bool:
    from .spectral import extreme_eigenvalues
    return Q.nnz == 0 or extreme_eigenvalues(Q).lo >= -tol


def model_is_convex(model: ModelIR) -> bool:
    return _is_psd(model.obj_Q) and all(_is_psd(q.Q) for q in model.quad)


def var_kind(inst: MiqcqpInstance, i: int) -> str:
    if not inst.integer[i]:
        return "continuous"
    return "binary" if inst.binary[i] else "integer"


def add_original_vars(b: ModelBuilder, inst: MiqcqpInstance) -> None:
    for i in range(inst.n):
        name = inst.var_names[i] if inst.var_names else f"x{i}"
        b.add_var(name, inst.lower[i], inst.upper[i], var_kind(inst, i), ("x", i))


def add_linear_rows(b: ModelBuilder, inst: MiqcqpInstance) -> None:
    A = inst.A.tocsr()
    for r in range(inst.m2):
        s, e = A.indptr[r], A.indptr[r + 1]
        b.add_linear(dict(zip(A.indices[s:e].tolist(), A.data[s:e].tolist())), "<=", float(inst.b_A[r]))


def _coefs(a: np.ndarray) -> dict:
    nz = np.flatnonzero(a)
    return dict(zip(nz.tolist(), a[nz].tolist()))


def original_model(inst: MiqcqpInstance, with_objective: bool = True) -> ModelIR:
    """The instance itself as a model over ``("x", i)`` variables."""
    b = ModelBuilder(inst.name)
    add_original_vars(b, inst)
    add_linear_rows(b, inst)
    for r in inst.quad_constraints:
        b.add_quadratic(r.Q.entries(), _coefs(r.a), r.b)
    if with_objective:
        o = inst.objective
        b.set_objective(o.Q.entries(), _coefs(o.a), o.b)
    m = b.build()
    return replace(m, convex=model_is_convex(m))


def _num(v: float):
    return None if not np.isfinite(v) else float(v)


def _from_num(v, default: float) -> float:
    return default if v is None else float(v)


def model_to_json(model: ModelIR) -> dict:
    A = model.A.tocsr()
    lin = []
    for r in range(A.shape[0]):
        s, e = A.indptr[r], A.indptr[r + 1]
        lin.append({"coefs": [[int(j), float(v)] for j, v in zip(A.indices[s:e], A.data[s:e])],
                    "sense": model.senses[r], "rhs": float(model.rhs[r])})

    def sparse_vec(a):
        nz = np.flatnonzero(a)
        return [[int(j), float(a[j])] for j in nz]

    return {
        "schema": SCHEMA,
        "name": model.name,
        "convex": bool(model.convex),
        "variables": [
            {"name": model.names[j], "lower": _num(model.lower[j]), "upper": _num(model.upper[j]),
             "kind": model.kinds[j], "origin": list(model.origins[j])}
            for j in range(model.n)],
        "linear_constraints": lin,
        "quad_constraints": [
            {"Q": [list(e) for e in q.Q.entries()], "coefs": sparse_vec(q.a), "sense": "<=",
             "rhs": float(q.rhs)} for q in model.quad],
        "objective": {"Q": [list(e) for e in model.obj_Q.entries()],
                      "coefs": sparse_vec(model.obj_c), "constant": float(model.obj_const)},
    }


def model_from_json(data: dict) -> ModelIR:
    if data.get("schema") != SCHEMA:
        raise ModelError(f"unsupported schema {data.get('schema')!r}")
    b = ModelBuilder(data.get("name", ""))
    for v in data["variables"]:
        b.add_var(v["name"], _from_num(v["lower"], -np.inf), _from_num(v["upper"], np.inf),
                  v["kind"], tuple(v.get("origin") or ()))
    for row in data["linear_constraints"]:
        b.add_linear({j: c for j, c in row["coefs"]}, row["sense"], row["rhs"])
    for row in data["quad_constraints"]:
        b.add_quadratic([tuple(e) for e in row["Q"]], {j: c for j, c in row["coefs"]}, row["rhs"])
    o = data["objective"]
    b.set_objective([tuple(e) for e in o["Q"]], {j: c for j, c in o["coefs"]}, o["constant"])
    return b.build(convex=bool(data.get("convex", False)))


def dump_model(model: ModelIR, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh)


def load_model(path) -> ModelIR:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(json.load(fh))


def models_equal(a: ModelIR, b: ModelIR) -> bool:
    return model_to_json(a) == model_to_json(b)


def relax_integrality(model: ModelIR) -> ModelIR:
    return replace(model, kinds=tuple("continuous" for _ in model.kinds))
