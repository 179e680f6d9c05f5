"""Reader and writer for the QPLIB text format.

QPLIB stores ``0.5 x'Hx`` with ``H`` given by its lower triangle, so a file
entry ``(i, j, v)`` contributes ``v/2`` to both ``Q_ij`` and ``Q_ji`` of the
internal ``x'Qx`` convention. Two-sided constraints ``cl <= g(x) <= cu`` are
split into ``<=`` rows; maximization is stored negated.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, TextIO, Union

import numpy as np
import scipy.sparse as sp

from .instance import (InstanceError, MiqcqpInstance, QuadraticRow, SymSparseMatrix,
                       classify, ProblemClass)

log = logging.getLogger(__name__)

DEFAULT_BIG_BOUND = 1e7
_OBJ_FLAGS = "LDCQ"
_VAR_FLAGS = "CBMIG"
_CON_FLAGS = "NBLDCQ"


class QplibParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class _Lines:
    def __init__(self, text: str):
        self._items: list[tuple[int, list[str]]] = []
        for no, raw in enumerate(text.splitlines(), start=1):
            body = raw.split("#", 1)[0].strip()
            if body:
                self._items.append((no, body.split()))
        self._pos = 0

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self._items)

    @property
    def lineno(self) -> Optional[int]:
        if self.exhausted:
            return self._items[-1][0] if self._items else None
        return self._items[self._pos][0]

    def next(self, what: str) -> tuple[int, list[str]]:
        if self.exhausted:
            raise QplibParseError(f"unexpected end of file while reading {what}", self.lineno)
        item = self._items[self._pos]
        self._pos += 1
        return item

    def number(self, what: str, kind=float):
        no, tok = self.next(what)
        return no, _num(tok[0], kind, no, what)

    def count(self, what: str) -> int:
        no, k = self.number(what, int)
        if k < 0:
            raise QplibParseError(f"negative count for {what}", no)
        return k


def _num(token: str, kind, lineno: int, what: str):
    try:
        if kind is int:
            return int(token)
        v = float(token)
    except ValueError:
        raise QplibParseError(f"cannot read {what} from {token!r}", lineno) from None
    if math.isnan(v):
        raise QplibParseError(f"nonfinite value in {what}", lineno)
    return v


def _index(token: str, size: int, lineno: int, what: str) -> int:
    i = _num(token, int, lineno, what) - 1
    if not 0 <= i < size:
        raise QplibParseError(f"{what} index {i + 1} out of range 1..{size}", lineno)
    return i


def _finite(v: float, lineno: int, what: str) -> float:
    if not math.isfinite(v):
        raise QplibParseError(f"nonfinite coefficient in {what}", lineno)
    return v


def _read_vec(lines: _Lines, size: int, what: str, kind=float):
    """Default value, count, then ``index value`` lines. Returns values and
    the line each value came from."""
    dline, default = lines.number(f"default {what}", kind)
    vals = np.full(size, default, dtype=float if kind is float else int)
    src = np.full(size, dline, dtype=int)
    for _ in range(lines.count(f"number of {what} entries")):
        no, tok = lines.next(what)
        if len(tok) < 2:
            raise QplibParseError(f"expected 'index value' for {what}", no)
        i = _index(tok[0], size, no, what)
        vals[i] = _num(tok[1], kind, no, what)
        src[i] = no
    return vals, src


@dataclass
class _Raw:
    name: str
    code: str
    sense: str
    n: int
    m: int
    obj_terms: list
    c: np.ndarray
    c0: float
    con_quad: list
    con_lin: list
    infinity: float
    cl: np.ndarray
    cu: np.ndarray
    lo: np.ndarray
    lo_src: np.ndarray
    up: np.ndarray
    up_src: np.ndarray
    vtype: np.ndarray
    vtype_src: np.ndarray
    var_names: Optional[list]


def _read_raw(text: str) -> _Raw:
    lines = _Lines(text)
    _, tok = lines.next("problem name")
    name = tok[0]
    no, tok = lines.next("problem type")
    code = tok[0].upper()
    if len(code) != 3 or code[0] not in _OBJ_FLAGS or code[1] not in _VAR_FLAGS or code[2] not in _CON_FLAGS:
        raise QplibParseError(f"malformed problem type code {tok[0]!r}", no)
    no, tok = lines.next("objective sense")
    sense = tok[0].lower()
    if sense not in ("minimize", "maximize"):
        raise QplibParseError(f"objective sense must be minimize or maximize, got {tok[0]!r}", no)
    no, n = lines.number("number of variables", int)
    if n <= 0:
        raise QplibParseError("number of variables must be positive", no)
    m = 0
    if code[2] not in "NB":
        no, m = lines.number("number of constraints", int)
        if m < 0:
            raise QplibParseError("negative number of constraints", no)

    obj_terms = []
    if code[0] != "L":
        for _ in range(lines.count("number of quadratic objective terms")):
            no, tok = lines.next("quadratic objective term")
            if len(tok) < 3:
                raise QplibParseError("expected 'i j value' for quadratic objective term", no)
            i = _index(tok[0], n, no, "variable")
            j = _index(tok[1], n, no, "variable")
            obj_terms.append((i, j, _finite(_num(tok[2], float, no, "objective"), no, "objective")))
    c, csrc = _read_vec(lines, n, "linear objective coefficient")
    for i in range(n):
        _finite(c[i], csrc[i], "linear objective")
    no, c0 = lines.number("objective constant")
    _finite(c0, no, "objective constant")

    con_quad, con_lin = [], []
    if m > 0:
        if code[2] in "DCQ":
            for _ in range(lines.count("number of quadratic constraint terms")):
                no, tok = lines.next("quadratic constraint term")
                if len(tok) < 4:
                    raise QplibParseError("expected 'k i j value' for quadratic constraint term", no)
                k = _index(tok[0], m, no, "constraint")
                i = _index(tok[1], n, no, "variable")
                j = _index(tok[2], n, no, "variable")
                con_quad.append((k, i, j, _finite(_num(tok[3], float, no, "constraint"), no, "constraint")))
        for _ in range(lines.count("number of linear constraint terms")):
            no, tok = lines.next("linear constraint term")
            if len(tok) < 3:
                raise QplibParseError("expected 'k i value' for linear constraint term", no)
            k = _index(tok[0], m, no, "constraint")
            i = _index(tok[1], n, no, "variable")
            con_lin.append((k, i, _finite(_num(tok[2], float, no, "constraint"), no, "constraint")))
    no, infinity = lines.number("infinity value")
    if not infinity > 0:
        raise QplibParseError("infinity value must be positive", no)

    cl = np.full(0, -np.inf)
    cu = np.full(0, np.inf)
    if m > 0:
        cl, _ = _read_vec(lines, m, "constraint lower bound")
        cu, _ = _read_vec(lines, m, "constraint upper bound")
    if code[1] == "B":
        lo, up = np.zeros(n), np.ones(n)
        lo_src = up_src = np.zeros(n, dtype=int)
    else:
        lo, lo_src = _read_vec(lines, n, "variable lower bound")
        up, up_src = _read_vec(lines, n, "variable upper bound")
    if code[1] in "MG":
        vtype, vtype_src = _read_vec(lines, n, "variable type", int)
        bad = np.flatnonzero(~np.isin(vtype, (0, 1, 2)))
        if len(bad):
            raise QplibParseError(f"unknown variable type {vtype[bad[0]]}", int(vtype_src[bad[0]]))
    else:
        fill = {"C": 0, "B": 2, "I": 1}[code[1]]
        vtype, vtype_src = np.full(n, fill), np.zeros(n, dtype=int)

    # starting point, duals and names are optional for our purposes
    var_names = None
    try:
        if not lines.exhausted:
            _read_vec(lines, n, "starting point")
        if not lines.exhausted and m > 0:
            _read_vec(lines, m, "constraint dual")
        if not lines.exhausted:
            _read_vec(lines, n, "bound dual")
        if not lines.exhausted:
            k = lines.count("number of variable names")
            names = [f"x{i + 1}" for i in range(n)]
            for _ in range(k):
                no, tok = lines.next("variable name")
                names[_index(tok[0], n, no, "variable")] = tok[1] if len(tok) > 1 else tok[0]
            var_names = names if k else None
    except QplibParseError:
        raise
    return _Raw(name, code, sense, n, m, obj_terms, c, c0, con_quad, con_lin, infinity,
                cl, cu, lo, lo_src, up, up_src, vtype, vtype_src, var_names)


def _half_sym(n: int, terms) -> SymSparseMatrix:
    return SymSparseMatrix.from_entries(n, ((i, j, 0.5 * v) for i, j, v in terms))


def parse_qplib(source: Union[str, TextIO]) -> MiqcqpInstance:
    """Parse QPLIB text (a string or an open text stream)."""
    text = source if isinstance(source, str) else source.read()
    raw = _read_raw(text)
    n, m, inf = raw.n, raw.m, raw.infinity

    Q0 = _half_sym(n, raw.obj_terms)
    a0 = raw.c.astype(float)
    b0 = float(raw.c0)
    sign = -1.0 if raw.sense == "maximize" else 1.0
    if sign < 0:
        Q0, a0, b0 = Q0.scaled(-1.0), -a0, -b0

    quad_terms: list[list] = [[] for _ in range(m)]
    for k, i, j, v in raw.con_quad:
        quad_terms[k].append((i, j, v))
    lin_terms: list[dict] = [dict() for _ in range(m)]
    for k, i, v in raw.con_lin:
        lin_terms[k][i] = lin_terms[k].get(i, 0.0) + v

    quad_rows: list[QuadraticRow] = []
    A_rows: list[dict] = []
    b_A: list[float] = []
    for k in range(m):
        lo_k = raw.cl[k] if raw.cl[k] > -inf else -np.inf
        up_k = raw.cu[k] if raw.cu[k] < inf else np.inf
        if lo_k > up_k:
            raise QplibParseError(f"constraint {k + 1} has lower bound above upper bound")
        a = np.zeros(n)
        for i, v in lin_terms[k].items():
            a[i] = v
        Qk = _half_sym(n, quad_terms[k])
        if Qk.nnz:
            if np.isfinite(up_k):
                quad_rows.append(QuadraticRow(Qk, a, float(up_k)))
            if np.isfinite(lo_k):
                quad_rows.append(QuadraticRow(Qk.scaled(-1.0), -a, float(-lo_k)))
        else:
            row = {i: v for i, v in lin_terms[k].items() if v != 0}
            if np.isfinite(up_k):
                A_rows.append(row)
                b_A.append(float(up_k))
            if np.isfinite(lo_k):
                A_rows.append({i: -v for i, v in row.items()})
                b_A.append(float(-lo_k))

    integer = raw.vtype > 0
    lo = np.where(raw.lo <= -inf, -np.inf, raw.lo).astype(float)
    up = np.where(raw.up >= inf, np.inf, raw.up).astype(float)
    binary = raw.vtype == 2
    lo[binary] = np.maximum(lo[binary], 0.0)
    up[binary] = np.minimum(up[binary], 1.0)

    in_quad = np.zeros(n, dtype=bool)
    for Q in [Q0] + [r.Q for r in quad_rows]:
        in_quad[Q.support] = True
    for i in range(n):
        for bounds, src, side in ((lo, raw.lo_src, "lower"), (up, raw.up_src, "upper")):
            if np.isfinite(bounds[i]):
                continue
            line = int(src[i]) or None
            if integer[i]:
                raise QplibParseError(f"missing {side} bound for integer variable {i + 1}", line)
            if in_quad[i]:
                raise QplibParseError(
                    f"infinite {side} bound for continuous variable {i + 1} in a quadratic term", line)
            log.warning("variable %d has an infinite %s bound; replaced by %g",
                        i + 1, side, DEFAULT_BIG_BOUND)
            bounds[i] = DEFAULT_BIG_BOUND if side == "upper" else -DEFAULT_BIG_BOUND
    lo[integer] = np.ceil(lo[integer] - 1e-9)
    up[integer] = np.floor(up[integer] + 1e-9)

    A = _rows_to_csr(A_rows, n)
    try:
        return MiqcqpInstance(
            n=n, objective=QuadraticRow(Q0, a0, b0), quad_constraints=tuple(quad_rows),
            A=A, b_A=np.asarray(b_A, dtype=float), lower=lo, upper=up, integer=integer,
            name=raw.name, sense="max" if sign < 0 else "min", declared_type=raw.code,
            var_names=tuple(raw.var_names) if raw.var_names else None)
    except InstanceError as exc:
        raise QplibParseError(str(exc)) from exc


def _rows_to_csr(rows: list[dict], n: int) -> sp.csr_matrix:
    r, c, v = [], [], []
    for k, row in enumerate(rows):
        for i, val in sorted(row.items()):
            r.append(k)
            c.append(i)
            v.append(val)
    return sp.csr_matrix((v, (r, c)), shape=(len(rows), n))


def read_qplib(path) -> MiqcqpInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_qplib(fh)


def _fmt(v: float) -> str:
    return repr(float(v))


def _type_code(inst: MiqcqpInstance) -> str:
    obj = "Q" if inst.objective.Q.nnz else "L"
    if not inst.integer.any():
        var = "C"
    elif inst.binary.all():
        var = "B"
    elif inst.integer.all():
        var = "I"
    elif (inst.integer == inst.binary).all():
        var = "M"
    else:
        var = "G"
    cls = classify(inst)
    con = {ProblemClass.MIBQP: "B", ProblemClass.MIQP: "L", ProblemClass.MIQCP: "Q"}[cls]
    return obj + var + con


def emit_qplib(inst: MiqcqpInstance) -> str:
    """Write ``inst`` as QPLIB text; ``parse_qplib`` recovers an equal instance."""
    code = _type_code(inst)
    sign = -1.0 if inst.sense == "max" else 1.0
    n, m = inst.n, inst.m1 + inst.m2
    out: list[str] = [
        f"{inst.name or 'instance'} # problem name",
        f"{code} # problem type",
        ("maximize" if sign < 0 else "minimize") + " # sense",
        f"{n} # variables",
    ]
    if code[2] not in "NB":
        out.append(f"{m} # constraints")

    def lower_triangle(Q: SymSparseMatrix, scale: float):
        # internal Q_ij = file_value / 2, and file entries have i >= j
        return [(c, r, 2.0 * v * scale) for r, c, v in Q.entries()]

    if code[0] != "L":
        terms = lower_triangle(inst.objective.Q, sign)
        out.append(f"{len(terms)} # quadratic objective terms")
        out += [f"{i + 1} {j + 1} {_fmt(v)}" for i, j, v in terms]
    a0 = inst.objective.a * sign
    nz = np.flatnonzero(a0)
    out.append("0.0 # default linear objective coefficient")
    out.append(f"{len(nz)} # non-default linear objective coefficients")
    out += [f"{i + 1} {_fmt(a0[i])}" for i in nz]
    out.append(f"{_fmt(inst.objective.b * sign)} # objective constant")

    if m > 0:
        if code[2] in "DCQ":
            qterms = []
            for k, row in enumerate(inst.quad_constraints):
                qterms += [(k, i, j, v) for i, j, v in lower_triangle(row.Q, 1.0)]
            out.append(f"{len(qterms)} # quadratic constraint terms")
            out += [f"{k + 1} {i + 1} {j + 1} {_fmt(v)}" for k, i, j, v in qterms]
        lterms = []
        for k, row in enumerate(inst.quad_constraints):
            lterms += [(k, i, row.a[i]) for i in np.flatnonzero(row.a)]
        A = inst.A.tocsr()
        for r in range(inst.m2):
            s, e = A.indptr[r], A.indptr[r + 1]
            lterms += [(inst.m1 + r, int(i), v) for i, v in zip(A.indices[s:e], A.data[s:e])]
        out.append(f"{len(lterms)} # linear constraint terms")
        out += [f"{k + 1} {i + 1} {_fmt(v)}" for k, i, v in lterms]
    out.append("1.0E+30 # infinity")
    if m > 0:
        rhs = [r.b for r in inst.quad_constraints] + list(inst.b_A)
        out.append("-1.0E+30 # default constraint lower bound")
        out.append("0 # non-default constraint lower bounds")
        out.append("0.0 # default constraint upper bound")
        out.append(f"{m} # non-default constraint upper bounds")
        out += [f"{k + 1} {_fmt(v)}" for k, v in enumerate(rhs)]
    if code[1] != "B":
        for what, vals in (("lower", inst.lower), ("upper", inst.upper)):
            out.append(f"0.0 # default variable {what} bound")
            nz = np.flatnonzero(vals)
            out.append(f"{len(nz)} # non-default variable {what} bounds")
            out += [f"{i + 1} {_fmt(vals[i])}" for i in nz]
    if code[1] in "MG":
        ints = np.flatnonzero(inst.integer)
        out.append("0 # default variable type")
        out.append(f"{len(ints)} # non-default variable types")
        out += [f"{i + 1} 1" for i in ints]
    out.append("0.0 # default primal value")
    out.append("0 # non-default primal values")
    if m > 0:
        out.append("0.0 # default constraint dual value")
        out.append("0 # non-default constraint dual values")
    out.append("0.0 # default bound dual value")
    out.append("0 # non-default bound dual values")
    if inst.var_names:
        out.append(f"{n} # non-default variable names")
        out += [f"{i + 1} {name}" for i, name in enumerate(inst.var_names)]
    else:
        out.append("0 # non-default variable names")
    out.append("0 # non-default constraint names")
    return "\n".join(out) + "\n"


def write_qplib(inst: MiqcqpInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_qplib(inst))


def iter_qplib_files(directory) -> Iterator[Path]:
    yield from sorted(Path(directory).glob("*.qplib"))
