"""Iterative linear solvers over implicit operators.

``lfpi`` is the linear fixed-point iteration ``z <- B z + b``: the
recursion an unrolled solver performs implicitly when it is
backpropagated.  ``krylov_solve`` is restarted GMRES on ``A x = b`` and
only ever calls ``A.apply``.
"""
import logging
import math

import numpy as np
import scipy.linalg

from foldcore import exceptions
from foldcore import linalg


LOG = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
BREAKDOWN_TOL = 1e-14
DEFAULT_RESTART = 30


class LinSolveReport(object):
    """Outcome of an iterative linear solve.

    ``residual_norm`` is the infinity norm of the true residual, computed
    from ``solution`` when the report is built.  ``per_iter_residuals``
    holds one entry per iteration: the successive-iterate difference for
    LFPI, the estimated 2-norm residual for GMRES.
    """
    def __init__(self, solution, iterations, residual_norm, converged,
                 per_iter_residuals):
        self.solution = solution
        self.iterations = iterations
        self.residual_norm = residual_norm
        self.converged = converged
        self.per_iter_residuals = per_iter_residuals

    def __repr__(self):
        return ('LinSolveReport(iterations=%s, residual_norm=%.3e, '
                'converged=%s)' % (self.iterations, self.residual_norm,
                                   self.converged))


def _as_op(op):
    if isinstance(op, linalg.FunctionOperator):
        return op
    return linalg.as_operator(op)


def lfpi(B, b, z0=None, tol=1e-10, max_iter=5000):
    """Iterate ``z_{k+1} = B z_k + b``.

    Stops once successive iterates differ by less than ``tol`` in the
    infinity norm.  Reaching ``max_iter`` is not an error: the report's
    ``converged`` flag is simply left unset.
    """
    B = _as_op(B)
    if B.dim_in != B.dim_out:
        raise exceptions.ShapeMismatch('B', 'square', B.shape)
    n = B.dim_in
    b = linalg.as_vector(b, 'b', n)
    z = np.zeros(n) if z0 is None else linalg.as_vector(z0, 'z0', n)
    residuals = []
    converged = False
    for iteration in range(1, max_iter + 1):
        z_next = B.apply(z) + b
        diff = float(np.max(np.abs(z_next - z))) if n else 0.0
        residuals.append(diff)
        z = z_next
        norm = float(np.max(np.abs(z))) if n else 0.0
        if norm > DIVERGENCE_LIMIT:
            raise exceptions.Divergence(iteration, norm)
        if diff < tol:
            converged = True
            break
    residual_norm = float(np.max(np.abs(z - B.apply(z) - b))) if n else 0.0
    LOG.debug('lfpi stopped after %d iterations (converged=%s, '
              'residual %.3e)', len(residuals), converged, residual_norm)
    return LinSolveReport(z, len(residuals), residual_norm, converged,
                          residuals)


def krylov_solve(A, b, x0=None, tol=1e-10, max_iter=5000,
                 restart=DEFAULT_RESTART):
    """Restarted GMRES for ``A x = b``.

    Converged means ``||A x - b||_2 <= tol * (1 + ||b||_2)``.  Iterations
    count applications of ``A`` inside the Arnoldi process.
    """
    A = _as_op(A)
    if A.dim_in != A.dim_out:
        raise exceptions.ShapeMismatch('A', 'square', A.shape)
    n = A.dim_in
    b = linalg.as_vector(b, 'b', n)
    x = np.zeros(n) if x0 is None else linalg.as_vector(x0, 'x0', n)
    m = max(1, min(restart, n))
    target = tol * (1.0 + np.linalg.norm(b))
    residuals = []
    iterations = 0

    r = b - A.apply(x)
    beta = np.linalg.norm(r)
    while beta > target and iterations < max_iter:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        used = 0
        for j in range(m):
            if iterations >= max_iter:
                break
            w = A.apply(V[j])
            iterations += 1
            # Modified Gram-Schmidt.
            for i in range(j + 1):
                H[i, j] = np.dot(w, V[i])
                w = w - H[i, j] * V[i]
            h_next = np.linalg.norm(w)
            H[j + 1, j] = h_next
            for i in range(j):
                upper = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = upper
            denom = math.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                raise exceptions.Breakdown(iterations, h_next)
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            residuals.append(abs(g[j + 1]))
            used = j + 1
            if abs(g[j + 1]) <= target:
                break
            if h_next < BREAKDOWN_TOL:
                raise exceptions.Breakdown(iterations, h_next)
            V[j + 1] = w / h_next
        if used:
            y = scipy.linalg.solve_triangular(H[:used, :used], g[:used],
                                              check_finite=False)
            x = x + V[:used].T.dot(y)
        r = b - A.apply(x)
        beta = np.linalg.norm(r)

    converged = beta <= target
    report = LinSolveReport(linalg.check_finite(x, 'krylov_solve'),
                            iterations,
                            float(np.max(np.abs(r))) if n else 0.0,
                            converged, residuals)
    if not converged:
        LOG.warning('krylov_solve stopped after %d iterations with '
                    'residual %.3e', iterations, beta)
        raise exceptions.NoConvergence('krylov_solve', report, iterations)
    LOG.debug('krylov_solve converged after %d iterations', iterations)
    return report


def empirical_rate(per_iter_residuals):
    """Estimate ``-log rho(B)`` from a residual history.

    Uses the geometric mean of the last half (rounded up) of successive
    residual ratios.
    """
    residuals = np.asarray(per_iter_residuals, dtype=np.float64)
    positive = int(np.sum(residuals > 0))
    if residuals.size < 5 or positive != residuals.size:
        raise exceptions.InsufficientData(positive)
    ratios = residuals[1:] / residuals[:-1]
    tail = ratios[-int(math.ceil(ratios.size / 2.0)):]
    return float(-np.mean(np.log(tail)))
