"""Continuous conic relaxation of a model, solved with Clarabel.

Integrality is dropped. Convex quadratic rows become rotated second-order
cones. A nonconvex row ``x'Qx`` is relaxed by shifting its support by
``lam = lambda_min(Q) < 0`` and underestimating ``lam * x_i**2`` with the secant
``lam * ((l_i + u_i) x_i - l_i u_i)`` on the current bounds, which is valid
because ``x_i**2 <= (l_i + u_i) x_i - l_i u_i`` on ``[l_i, u_i]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import clarabel
import numpy as np
import scipy.sparse as sp

from ..instance import SymSparseMatrix
from ..model import ModelIR

log = logging.getLogger(__name__)

_SHIFT_MARGIN = 1e-7
_EIG_DROP = 1e-10


@dataclass
class RelaxResult:
    status: str  # "optimal", "infeasible", "unbounded", "time", "error"
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None


@dataclass
class _Row:
    F: Optional[np.ndarray]  # factor on the support: P_S = F'F
    support: np.ndarray
    shift: float  # 0 for convex rows


def _factor(Q: SymSparseMatrix) -> _Row:
    S = Q.support
    if len(S) == 0:
        return _Row(None, S, 0.0)
    w, V = np.linalg.eigh(Q.csr[S][:, S].toarray())
    lam = 0.0
    if w[0] < -_EIG_DROP * max(1.0, abs(w[-1])):
        lam = float(w[0] - _SHIFT_MARGIN * max(1.0, abs(w[0])))
        w = w - lam
    keep = w > _EIG_DROP * max(1.0, abs(w[-1]))
    F = (np.sqrt(w[keep])[:, None] * V[:, keep].T) if keep.any() else None
    return _Row(F, S, lam)


class ConicRelaxation:
    """Relaxation of ``model`` reusable across bound changes."""

    def __init__(self, model: ModelIR):
        self.model = model
        self.obj = _factor(model.obj_Q)
        self.rows = [_factor(q.Q) for q in model.quad]
        self.nonconvex = self.obj.shift < 0 or any(r.shift < 0 for r in self.rows)
        A = model.A.tocsr()
        senses = np.array(model.senses)
        self._eq = (A[senses == "="], model.rhs[senses == "="])
        le = sp.vstack([A[senses == "<="], -A[senses == ">="]]).tocsr()
        self._le = (le, np.concatenate([model.rhs[senses == "<="], -model.rhs[senses == ">="]]))

    def _secant(self, row: _Row, lo, up):
        """Linear coefficients and constant of ``lam * sum_S x_i**2`` underestimate,
        or ``None`` when some support bound is infinite."""
        S = row.support
        l, u = lo[S], up[S]
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(u))):
            return None
        coef = np.zeros(self.model.n)
        coef[S] = row.shift * (l + u)
        return coef, float(-row.shift * np.sum(l * u))

    def solve(self, lower=None, upper=None, time_limit: float = 10.0,
              objective: Optional[np.ndarray] = None) -> RelaxResult:
        """Minimize the relaxed objective (or the linear ``objective`` when
        given) over ``lower <= x <= upper``."""
        m = self.model
        n = m.n
        lo = m.lower if lower is None else np.asarray(lower, float)
        up = m.upper if upper is None else np.asarray(upper, float)
        if np.any(lo > up + 1e-12):
            return RelaxResult("infeasible")

        zero_rows, zero_rhs = [self._eq[0]], [self._eq[1]]
        fixed = np.flatnonzero(lo == up)
        if len(fixed):
            zero_rows.append(sp.csr_matrix((np.ones(len(fixed)), (np.arange(len(fixed)), fixed)),
                                           shape=(len(fixed), n)))
            zero_rhs.append(lo[fixed])
        nn_rows, nn_rhs = [self._le[0]], [self._le[1]]
        free = lo != up
        ub = np.flatnonzero(free & np.isfinite(up))
        lb = np.flatnonzero(free & np.isfinite(lo))
        if len(ub):
            nn_rows.append(sp.csr_matrix((np.ones(len(ub)), (np.arange(len(ub)), ub)), shape=(len(ub), n)))
            nn_rhs.append(up[ub])
        if len(lb):
            nn_rows.append(sp.csr_matrix((-np.ones(len(lb)), (np.arange(len(lb)), lb)), shape=(len(lb), n)))
            nn_rhs.append(-lo[lb])

        soc_rows, soc_rhs, soc_dims = [], [], []
        for q, row in zip(m.quad, self.rows):
            a, rhs = q.a.copy(), q.rhs
            if row.shift < 0:
                sec = self._secant(row, lo, up)
                if sec is None:
                    continue  # dropping a row keeps this a relaxation
                a += sec[0]
                rhs -= sec[1]
            if row.F is None:
                nn_rows.append(sp.csr_matrix(a[None, :]))
                nn_rhs.append(np.array([rhs]))
                continue
            k = row.F.shape[0]
            G = np.zeros((k, n))
            G[:, row.support] = -2.0 * row.F
            soc_rows.append(sp.vstack([sp.csr_matrix(a[None, :]), sp.csr_matrix(a[None, :]),
                                       sp.csr_matrix(G)]))
            soc_rhs.append(np.concatenate([[rhs + 1.0, rhs - 1.0], np.zeros(k)]))
            soc_dims.append(k + 2)

        const = m.obj_const
        if objective is not None:
            P = sp.csc_matrix((n, n))
            c = np.asarray(objective, dtype=float)
        else:
            c = m.obj_c.copy()
            Pfull = 2.0 * m.obj_Q.csr
            if self.obj.shift < 0:
                sec = self._secant(self.obj, lo, up)
                if sec is None:
                    # unbounded support: keep the convex part only, the bound is lost
                    const = -np.inf
                    sec = (np.zeros(n), 0.0)
                S = self.obj.support
                Pfull = Pfull - sp.csr_matrix((np.full(len(S), 2.0 * self.obj.shift), (S, S)),
                                              shape=(n, n))
                c += sec[0]
                const += sec[1]
            P = sp.triu(Pfull, format="csc")

        blocks = [b for b in zero_rows + nn_rows + soc_rows if b.shape[0]]
        G = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
        h = np.concatenate([r for r in zero_rhs + nn_rhs + soc_rhs if len(r)] or [np.zeros(0)])
        cones = []
        nz = sum(b.shape[0] for b in zero_rows)
        nnn = sum(b.shape[0] for b in nn_rows)
        if nz:
            cones.append(clarabel.ZeroConeT(nz))
        if nnn:
            cones.append(clarabel.NonnegativeConeT(nnn))
        cones += [clarabel.SecondOrderConeT(d) for d in soc_dims]

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.time_limit = max(time_limit, 1e-3)
        settings.max_iter = 400
        settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = 1e-10
        try:
            solver = clarabel.DefaultSolver(P.tocsc(), c, G, h, cones, settings)
            sol = solver.solve()
        except Exception as exc:  # clarabel raises on malformed data
            log.debug("clarabel failed: %s", exc)
            return RelaxResult("error")
        st = sol.status
        S = clarabel.SolverStatus
        if st in (S.Solved, S.AlmostSolved):
            x = np.clip(np.asarray(sol.x), lo, up)
            val = float(sol.obj_val) + const if objective is None else float(c @ x)
            return RelaxResult("optimal", x, val)
        if st in (S.PrimalInfeasible, S.AlmostPrimalInfeasible):
            return RelaxResult("infeasible")
        if st in (S.DualInfeasible, S.AlmostDualInfeasible):
            return RelaxResult("unbounded")
        if st == S.MaxTime:
            return RelaxResult("time")
        return RelaxResult("error")
