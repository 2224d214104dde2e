"""Dense linear algebra shared by every other module.

Vectors are 1-D and matrices 2-D ``float64`` numpy arrays.  The helpers
here validate shapes and finiteness at the boundaries of the library so
that inner loops can work on plain arrays.

Implicit operators subclass :class:`scipy.sparse.linalg.LinearOperator`,
so anything built here also plugs into scipy's iterative solvers.
"""
import logging
import warnings

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator

from foldcore import exceptions


LOG = logging.getLogger(__name__)

# Pivots smaller than this, relative to the largest entry of their
# original row, are reported as singular.
PIVOT_TOL = 1e-12


def check_finite(array, where):
    if not np.all(np.isfinite(array)):
        raise exceptions.NonFiniteError(where)
    return array


def as_vector(values, name='vector', length=None):
    array = np.array(values, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1)
    if array.ndim != 1:
        raise exceptions.ShapeMismatch(name, '1-D', array.shape)
    if length is not None and array.shape[0] != length:
        raise exceptions.ShapeMismatch(name, (length,), array.shape)
    return check_finite(array, name)


def as_matrix(values, name='matrix', shape=None):
    array = np.array(values, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    if array.ndim != 2:
        raise exceptions.ShapeMismatch(name, '2-D', array.shape)
    if shape is not None and array.shape != tuple(shape):
        raise exceptions.ShapeMismatch(name, tuple(shape), array.shape)
    return check_finite(array, name)


def unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


class LuFactor(object):
    """LU factorization with partial pivoting and a singularity gate.

    The factorization is computed once and may be reused for many
    right-hand sides, which is how the ADMM iteration solves its KKT
    system.
    """
    def __init__(self, a, error_cls=exceptions.SingularMatrix):
        a = as_matrix(a, 'a')
        if a.shape[0] != a.shape[1]:
            raise exceptions.ShapeMismatch('a', 'square', a.shape)
        n = a.shape[0]
        with warnings.catch_warnings():
            # scipy warns about exactly zero pivots; we raise below instead.
            warnings.simplefilter('ignore')
            lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
        perm = np.arange(n)
        for i, p in enumerate(piv):
            perm[i], perm[p] = perm[p], perm[i]
        row_scale = np.max(np.abs(a), axis=1) if n else np.zeros(0)
        pivots = np.diag(lu)
        for k in range(n):
            scale = row_scale[perm[k]]
            if scale == 0.0 or abs(pivots[k]) < PIVOT_TOL * scale:
                raise error_cls(k, pivots[k])
        self._a = a
        self._factor = (lu, piv)
        self.size = n

    def _check_rhs(self, b):
        b = np.array(b, dtype=np.float64)
        if b.ndim not in (1, 2) or b.shape[0] != self.size:
            raise exceptions.ShapeMismatch('b', (self.size,), b.shape)
        return check_finite(b, 'b')

    def solve(self, b):
        b = self._check_rhs(b)
        x = scipy.linalg.lu_solve(self._factor, b, check_finite=False)
        # One step of iterative refinement when the residual is poor.
        residual = b - self._a.dot(x)
        bound = 1e-9 * (1.0 + np.max(np.abs(b))) if b.size else 0.0
        if residual.size and np.max(np.abs(residual)) > bound:
            x = x + scipy.linalg.lu_solve(self._factor, residual,
                                          check_finite=False)
        return check_finite(x, 'lu_solve result')

    def solve_transpose(self, b):
        b = self._check_rhs(b)
        x = scipy.linalg.lu_solve(self._factor, b, trans=1,
                                  check_finite=False)
        return check_finite(x, 'lu_solve_transpose result')


def lu_factor(a, error_cls=exceptions.SingularMatrix):
    return LuFactor(a, error_cls=error_cls)


def lu_solve(a, b):
    """Solve ``a x = b`` for square ``a`` by LU with partial pivoting."""
    return LuFactor(a).solve(b)


class FunctionOperator(LinearOperator):
    """A linear operator given by a pair of mutually adjoint callables.

    ``apply`` maps vectors of length ``dim_in`` to length ``dim_out`` and
    ``apply_transpose`` maps back.  The two must satisfy
    ``<w, apply(v)> == <apply_transpose(w), v>``.

    ``apply_transpose`` may be None for operators that are only ever
    applied forward, such as the reverse-mode operators built from a
    step's vector-Jacobian products.
    """
    def __init__(self, apply, apply_transpose, dim_in, dim_out=None):
        if dim_out is None:
            dim_out = dim_in
        super(FunctionOperator, self).__init__(
            dtype=np.dtype(np.float64), shape=(dim_out, dim_in))
        self._apply = apply
        self._apply_transpose = apply_transpose

    @property
    def dim_in(self):
        return self.shape[1]

    @property
    def dim_out(self):
        return self.shape[0]

    @property
    def has_transpose(self):
        return self._apply_transpose is not None

    def apply(self, v):
        v = as_vector(v, 'v', self.dim_in)
        out = np.asarray(self._apply(v), dtype=np.float64)
        if out.shape != (self.dim_out,):
            raise exceptions.ShapeMismatch(
                'apply result', (self.dim_out,), out.shape)
        return check_finite(out, 'operator apply')

    def apply_transpose(self, w):
        if self._apply_transpose is None:
            raise NotImplementedError('operator has no transpose')
        w = as_vector(w, 'w', self.dim_out)
        out = np.asarray(self._apply_transpose(w), dtype=np.float64)
        if out.shape != (self.dim_in,):
            raise exceptions.ShapeMismatch(
                'apply_transpose result', (self.dim_in,), out.shape)
        return check_finite(out, 'operator apply_transpose')

    def _matvec(self, v):
        return self.apply(np.ravel(v))

    def _rmatvec(self, w):
        return self.apply_transpose(np.ravel(w))


def as_operator(m):
    m = as_matrix(m, 'm')
    return FunctionOperator(m.dot, m.T.dot, dim_in=m.shape[1],
                            dim_out=m.shape[0])


def identity_minus(op):
    """The operator ``I - op`` for a square operator."""
    if op.dim_in != op.dim_out:
        raise exceptions.ShapeMismatch('op', 'square', op.shape)
    transpose = None
    if op.has_transpose:
        transpose = lambda w: w - op.apply_transpose(w)
    return FunctionOperator(lambda v: v - op.apply(v), transpose,
                            dim_in=op.dim_in)


def materialize(op):
    """Dense matrix of an operator, one column per unit vector."""
    columns = [op.apply(unit(op.dim_in, j)) for j in range(op.dim_in)]
    return np.column_stack(columns) if columns else np.zeros((op.dim_out, 0))


def spectral_radius(op, max_iter=5000, tol=1e-10):
    """Power-iteration estimate of the dominant eigenvalue magnitude.

    The start vector is the normalized ``(1, 1/2, 1/3, ...)``.  The
    reported estimate is the geometric mean of the last two norm ratios,
    which is exact when the dominant eigenvalues come as a ``+r, -r`` pair.
    """
    if op.dim_in != op.dim_out or op.dim_in < 1:
        raise exceptions.ShapeMismatch('op', 'square, dim >= 1', op.shape)
    n = op.dim_in
    if n == 1:
        return float(abs(op.apply(np.ones(1))[0]))
    v = 1.0 / np.arange(1, n + 1)
    v /= np.linalg.norm(v)
    previous_ratio = None
    previous_estimate = None
    estimate = 0.0
    for iteration in range(1, max_iter + 1):
        w = op.apply(v)
        ratio = np.linalg.norm(w)
        if ratio == 0.0:
            return 0.0
        if previous_ratio is None:
            estimate = ratio
        else:
            estimate = np.sqrt(ratio * previous_ratio)
        if (previous_estimate is not None and
                abs(estimate - previous_estimate) < tol):
            LOG.debug('spectral_radius converged to %.10g after %d '
                      'iterations', estimate, iteration)
            return float(estimate)
        previous_ratio = ratio
        previous_estimate = estimate
        v = w / ratio
    raise exceptions.NoConvergence(
        'spectral_radius power iteration', float(estimate), max_iter)
