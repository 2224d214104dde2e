import itertools
import unittest

import numpy as np

from foldcore import folding


# Brute-force oracle for small standard-form QPs
#     min 1/2 x'Qx + p'x  s.t.  Ax = b, x >= 0
# Every support pattern is tried; the KKT-feasible one with the lowest
# objective wins.  Only sensible for n <= 8 or so.
def active_set_qp(Q, p, A, b, tol=1e-9):
    n, m = Q.shape[0], A.shape[0]
    best = None
    for size in range(n + 1):
        for support in itertools.combinations(range(n), size):
            free = np.zeros(n, dtype=bool)
            free[list(support)] = True
            nf = len(support)
            M = np.block([[Q[np.ix_(free, free)], A[:, free].T],
                          [A[:, free], np.zeros((m, m))]])
            rhs = np.concatenate([-p[free], b])
            sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
            if np.max(np.abs(M.dot(sol) - rhs), initial=0.0) > tol:
                continue
            x = np.zeros(n)
            x[free] = sol[:nf]
            nu = sol[nf:]
            bound = Q.dot(x) + p + A.T.dot(nu)
            if np.any(x < -tol) or np.any(bound[~free] < -tol):
                continue
            value = 0.5 * x.dot(Q).dot(x) + p.dot(x)
            if best is None or value < best[0] - tol:
                best = (value, x)
    if best is None:
        raise AssertionError('QP has no KKT point')
    return best[1]


def random_spd(rng, n, shift=0.5):
    M = rng.standard_normal((n, n))
    return M.dot(M.T) / n + shift * np.eye(n)


def random_feasible_qp(rng, n, m):
    """Q, p, A, b with a strictly positive feasible point."""
    Q = random_spd(rng, n)
    p = rng.standard_normal(n)
    A = rng.uniform(0.1, 1.0, (m, n))
    b = A.dot(rng.uniform(0.1, 1.0, n))
    return Q, p, A, b


def assert_grad_close(actual, expected, atol=1e-4, rtol=1e-3):
    np.testing.assert_allclose(actual, expected, atol=atol, rtol=rtol)


def end_to_end_fd(layer, c, g, h=1e-5):
    """Central differences of ``g' y*(c)`` through full forward solves."""
    return folding.fd_vjp(layer, c, g, h=h)


def fd_gradient(fn, x, h=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for j in range(x.size):
        plus = x.copy()
        minus = x.copy()
        plus.flat[j] += h
        minus.flat[j] -= h
        out.flat[j] = (fn(plus) - fn(minus)) / (2.0 * h)
    return out


def seeded(count, offset=0):
    """Yield ``(seed, rng)`` for ``count`` consecutive seeds."""
    for seed in range(offset, offset + count):
        yield seed, np.random.RandomState(seed)
