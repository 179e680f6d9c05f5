"""Extreme eigenvalues and the diagonal perturbation shifts.

Two shift rules are supported for a symmetric ``Q``:

* classic: ``lambda = min(0, lambda_min(Q))``
* safe:    ``lambda_s = min(2 * lambda_min(Q_beta), lambda_min(Q)) - 1``

where ``Q_beta`` is the principal block on the continuous indices. Both make
``Q - lambda I`` positive semidefinite. ``verify_bounds`` evaluates the norm
bounds relating the optimizer of the perturbed box-only MIQP to ``uhat``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .instance import MiqcqpInstance, SymSparseMatrix

log = logging.getLogger(__name__)

DENSE_LIMIT = 64
THETA_ENUM_LIMIT = 20


class Extremes(NamedTuple):
    lo: float
    hi: float
    fallback: bool = False


def _gershgorin(M: sp.spmatrix) -> tuple[float, float]:
    M = sp.csr_matrix(M)
    d = M.diagonal()
    radius = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - radius)), float(np.max(d + radius))


def _extremes_of(M, tol: float, method: str) -> Extremes:
    dim = M.shape[0]
    if method == "gershgorin":
        return Extremes(*_gershgorin(M), fallback=True)
    if method == "dense" or (method == "auto" and dim <= DENSE_LIMIT):
        w = np.linalg.eigvalsh(M.toarray() if sp.issparse(M) else np.asarray(M))
        return Extremes(float(w[0]), float(w[-1]))
    try:
        maxiter = 10 * dim
        lo = spla.eigsh(M, k=1, which="SA", tol=tol, maxiter=maxiter, return_eigenvectors=False)
        hi = spla.eigsh(M, k=1, which="LA", tol=tol, maxiter=maxiter, return_eigenvectors=False)
        return Extremes(float(lo[0]), float(hi[0]))
    except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
        log.warning("eigsh failed (%s); using Gershgorin bounds", exc)
        return Extremes(*_gershgorin(M), fallback=True)


def extreme_eigenvalues(M: SymSparseMatrix, tol: float = 1e-6, method: str = "auto") -> Extremes:
    """Smallest and largest eigenvalue of ``M``.

    Only the principal block on the support is factorized; rows that are
    entirely zero add the eigenvalue 0. ``method`` is ``auto``, ``dense``,
    ``lanczos`` or ``gershgorin``. When Lanczos fails to converge within
    ``10 * dim`` iterations the Gershgorin interval is returned, which encloses
    the spectrum, and ``fallback`` is set.
    """
    if M.dim < 1:
        raise ValueError("matrix must have dim >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    supp = M.support
    if len(supp) == 0:
        return Extremes(0.0, 0.0)
    sub = M.csr[supp][:, supp]
    ext = _extremes_of(sub, tol, method)
    if len(supp) < M.dim:
        ext = Extremes(min(ext.lo, 0.0), max(ext.hi, 0.0), ext.fallback)
    return ext


def _principal(M: SymSparseMatrix, idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=int)
    return M.csr[idx][:, idx].toarray()


def _beta_index(beta, dim: int) -> np.ndarray:
    beta = np.asarray(beta)
    if beta.dtype == bool:
        return np.flatnonzero(beta)
    return np.unique(beta.astype(int)) if beta.size else np.zeros(0, dtype=int)


def classic_shift(M: SymSparseMatrix, tol: float = 1e-6) -> float:
    return min(0.0, extreme_eigenvalues(M, tol).lo)


def safe_shift(M: SymSparseMatrix, beta, tol: float = 1e-6) -> float:
    """``min(2 * lambda_min(M[beta, beta]), lambda_min(M)) - 1``; with no
    continuous indices this is the classic shift."""
    b = _beta_index(beta, M.dim)
    if len(b) == 0:
        return classic_shift(M, tol)
    lam_min = extreme_eigenvalues(M, tol).lo
    lam_b = float(np.linalg.eigvalsh(_principal(M, b))[0]) if len(b) <= DENSE_LIMIT else \
        extreme_eigenvalues(SymSparseMatrix.from_dense(_principal(M, b)), tol).lo
    return min(2.0 * lam_b, lam_min) - 1.0


@dataclass(frozen=True)
class SpectralInfo:
    lambda_min: float
    lambda_max: float
    lambda_classic: float
    lambda_beta_min: float
    lambda_beta_max: float
    lambda_safe: float
    fallback: bool = False

    @property
    def psd(self) -> bool:
        return self.lambda_min >= 0.0


def spectral_info(M: SymSparseMatrix, beta, tol: float = 1e-6) -> SpectralInfo:
    ext = extreme_eigenvalues(M, tol)
    b = _beta_index(beta, M.dim)
    if len(b):
        w = np.linalg.eigvalsh(_principal(M, b))
        lb, ub = float(w[0]), float(w[-1])
        safe = min(2.0 * lb, ext.lo) - 1.0
    else:
        lb = ub = float("nan")
        safe = min(0.0, ext.lo)
    return SpectralInfo(ext.lo, ext.hi, min(0.0, ext.lo), lb, ub, safe, ext.fallback)


def deviation_coefficient(lam_beta_min: float, lam_beta_max: float, shift: float) -> float:
    """Coefficient of ``||uhat_beta||`` in the deviation bound
    ``(2*lam_max - shift) / (2*(lam_min - shift))``."""
    return (2.0 * lam_beta_max - shift) / (2.0 * (lam_beta_min - shift))


@dataclass(frozen=True)
class BoundReport:
    shift: float
    lambda_beta_min: float
    lambda_beta_max: float
    omega: float
    theta_bar: float
    theta_exact: bool
    norm_x_beta: float
    deviation: float
    lower_bound: Optional[float]
    upper_bound: Optional[float]
    deviation_bound: Optional[float]
    lower_holds: Optional[bool]
    upper_holds: Optional[bool]
    deviation_holds: Optional[bool]
    degenerate: bool
    active: tuple[int, ...] = ()

    @property
    def all_defined_hold(self) -> bool:
        return all(h is not False for h in (self.lower_holds, self.upper_holds, self.deviation_holds))


def _theta_bar(Qg: np.ndarray, a_beta: np.ndarray) -> tuple[float, bool]:
    n_alpha = Qg.shape[0]
    if n_alpha <= THETA_ENUM_LIMIT:
        best = 0.0
        for bits in itertools.product((0.0, 1.0), repeat=n_alpha):
            v = 2.0 * Qg.T @ np.asarray(bits) + a_beta
            best = max(best, float(np.linalg.norm(v)))
        return best, True
    return float(np.linalg.norm(2.0 * Qg, axis=1).sum() + np.linalg.norm(a_beta)), False


def _leq(lhs: float, rhs: float, rtol: float = 1e-7) -> bool:
    return lhs <= rhs + rtol * max(1.0, abs(rhs))


def verify_bounds(inst: MiqcqpInstance, uhat_beta: Sequence[float], x_star: Sequence[float],
                  shift: float, active_tol: float = 1e-9) -> BoundReport:
    """Check the norm bounds for an optimizer ``x_star`` of

        min x'(Q - shift I)x + a'x + shift * uhat_beta'x_beta + shift * 1'x_alpha
        s.t. x_alpha binary, x_beta >= 0

    on a box-only instance (binaries ``alpha``, continuous ``beta``).

    Each inequality is evaluated only where its coefficient is well defined:
    the lower norm bound needs ``shift < lambda_max(Q_beta)``, the upper norm
    bound and the deviation bound need ``shift < lambda_min(Q_beta)``, and the
    deviation bound also needs ``Q_beta - shift/2 I`` to have spectral norm
    ``lambda_max(Q_beta) - shift/2``, i.e. ``shift <= lambda_min + lambda_max``.
    All bounds need a negative shift. Undefined checks are reported as ``None``.
    """
    Q = inst.objective.Q.to_dense()
    a = np.asarray(inst.objective.a, dtype=float)
    alpha = np.flatnonzero(inst.integer)
    beta = np.flatnonzero(~inst.integer)
    x = np.asarray(x_star, dtype=float)
    u = np.asarray(uhat_beta, dtype=float)
    if len(u) != len(beta):
        raise ValueError("uhat_beta must have one entry per continuous variable")
    lam = float(shift)
    if len(beta) == 0:
        return BoundReport(lam, float("nan"), float("nan"), 0.0, 0.0, True, 0.0, 0.0,
                           0.0, 0.0, 0.0, True, True, True, False)

    Qb = Q[np.ix_(beta, beta)]
    Qg = Q[np.ix_(alpha, beta)]
    a_b = a[beta]
    w = np.linalg.eigvalsh(Qb)
    lb, ub = float(w[0]), float(w[-1])
    theta, exact = _theta_bar(Qg, a_b)
    xb = x[beta]
    xa = x[alpha]
    norm_xb = float(np.linalg.norm(xb))
    dev = float(np.linalg.norm(xb - u))
    prime = np.flatnonzero(xb > active_tol)
    g = 2.0 * Qg.T @ xa + a_b
    omega = float(np.linalg.norm(g[prime] / lam)) if len(prime) and lam != 0 else 0.0
    u_prime = float(np.linalg.norm(u[prime]))
    degenerate = not lam < lb

    lower = upper = dev_bound = None
    lower_ok = upper_ok = dev_ok = None
    if not lam < 0:
        # no perturbation: omega = g / shift is unbounded and nothing is defined
        return BoundReport(lam, lb, ub, omega, theta, exact, norm_xb, dev, None, None, None,
                           None, None, None, degenerate, tuple(int(i) for i in beta[prime]))
    if len(prime):
        if lam < ub:
            lower = lam / (2.0 * (lam - ub)) * abs(u_prime - omega)
            lower_ok = _leq(lower, norm_xb)
        if lam < lb:
            upper = lam / (2.0 * (lam - lb)) * (u_prime + omega)
            upper_ok = _leq(norm_xb, upper)
    else:
        # no positive continuous component: x_beta = 0 branch
        lower_ok = upper_ok = bool(norm_xb <= active_tol * max(1, len(beta)))
    if lam < lb and lam <= lb + ub:
        dev_bound = (deviation_coefficient(lb, ub, lam) * float(np.linalg.norm(u))
                     + theta / (2.0 * (lb - lam)))
        dev_ok = _leq(dev, dev_bound)
    return BoundReport(lam, lb, ub, omega, theta, exact, norm_xb, dev, lower, upper, dev_bound,
                       lower_ok, upper_ok, dev_ok, degenerate, tuple(int(i) for i in beta[prime]))
