"""Independent reference computations used by the tests.

Everything here works on dense numpy arrays built directly from instance data
and deliberately avoids the package's own evaluation and solver code.
"""

from __future__ import annotations

import itertools

import numpy as np


def dense(inst):
    """Objective and rows of ``inst`` as dense arrays."""
    Q0 = inst.objective.Q.to_dense()
    rows = [(r.Q.to_dense(), np.asarray(r.a, float), float(r.b)) for r in inst.quad_constraints]
    A = inst.A.toarray()
    return Q0, np.asarray(inst.objective.a, float), float(inst.objective.b), rows, A, np.asarray(inst.b_A)


def objective(inst, x):
    Q0, a0, b0, *_ = dense(inst)
    x = np.asarray(x, float)
    return float(x @ Q0 @ x + a0 @ x + b0)


def max_violation(inst, x):
    """Largest violation over rows, bounds and integrality."""
    _, _, _, rows, A, bA = dense(inst)
    x = np.asarray(x, float)
    v = [0.0]
    v += [float(x @ Q @ x + a @ x - b) for Q, a, b in rows]
    if A.size:
        v += list(A @ x - bA)
    v += list(inst.lower - x) + list(x - inst.upper)
    v += list(np.abs(x[inst.integer] - np.round(x[inst.integer])))
    return max(v)


def gradient(inst, x):
    Q0, a0, *_ = dense(inst)
    return 2.0 * Q0 @ np.asarray(x, float) + a0


def fd_gradient(f, x, h=1e-6):
    """Central differences."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def projected_gradient_residual(g, x, lo, up, tol=1e-7):
    """First-order stationarity residual on a box."""
    r = g.copy()
    at_lo = x <= lo + tol
    at_up = x >= up - tol
    r[at_lo] = np.minimum(g[at_lo], 0.0)
    r[at_up] = np.maximum(g[at_up], 0.0)
    return float(np.max(np.abs(r))) if len(r) else 0.0


def min_eig(M):
    return float(np.linalg.eigvalsh(np.asarray(M, float))[0])


def integer_points(inst):
    ints = np.flatnonzero(inst.integer)
    ranges = [range(int(inst.lower[i]), int(inst.upper[i]) + 1) for i in ints]
    for vals in itertools.product(*ranges):
        yield ints, np.array(vals, dtype=float)


def pure_integer_feasible_points(inst):
    """Every feasible point of a pure-integer instance."""
    assert inst.integer.all()
    out = []
    for ints, vals in integer_points(inst):
        x = np.zeros(inst.n)
        x[ints] = vals
        if max_violation(inst, x) <= 1e-9:
            out.append(x)
    return out


def perturbed_optimum(Q, a, alpha, beta, shift, uhat_beta):
    """Exact minimizer of

        x'(Q - shift I)x + a'x + shift*uhat'x_beta + shift*1'x_alpha
        s.t. x_alpha in {0,1}, x_beta >= 0

    for ``shift < lambda_min(Q_beta)``: binaries are enumerated and the
    strictly convex continuous part is solved by active-set enumeration.
    """
    n = Q.shape[0]
    P = Q - shift * np.eye(n)
    best_x, best_f = None, np.inf
    for bits in itertools.product((0.0, 1.0), repeat=len(alpha)):
        xa = np.array(bits)
        c = a[beta] + shift * np.asarray(uhat_beta) + 2.0 * P[np.ix_(beta, alpha)] @ xa
        Pb = P[np.ix_(beta, beta)]
        xb = None
        for r in range(len(beta) + 1):
            for free in itertools.combinations(range(len(beta)), r):
                free = list(free)
                z = np.zeros(len(beta))
                if free:
                    z[free] = np.linalg.solve(2.0 * Pb[np.ix_(free, free)], -c[free])
                if np.any(z < -1e-12):
                    continue
                g = 2.0 * Pb @ z + c
                fixed = [i for i in range(len(beta)) if i not in free]
                if np.all(g[fixed] >= -1e-10):
                    xb = np.maximum(z, 0.0)
                    break
            if xb is not None:
                break
        x = np.zeros(n)
        x[alpha] = xa
        x[beta] = xb
        f = float(x @ P @ x + a @ x + shift * np.asarray(uhat_beta) @ xb + shift * xa.sum())
        if f < best_f - 1e-12:
            best_x, best_f = x, f
    return best_x, best_f


def nearest_rounding(inst, x):
    x = np.asarray(x, float).copy()
    x[inst.integer] = np.clip(np.round(x[inst.integer]), inst.lower[inst.integer], inst.upper[inst.integer])
    return x


def hamming(a, b):
    return int(np.sum(np.round(a) != np.round(b)))
