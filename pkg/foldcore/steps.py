"""The update-step contract and its finite-difference oracle.

A :class:`DifferentiableStep` is one iteration ``x_{k+1} = U(x_k, c)`` of
some solver together with the two vector-Jacobian products

    vjp_state(x, c, v) = v^T dU/dx      (the rows of Phi, read backwards)
    vjp_param(x, c, v) = v^T dU/dc      (the rows of Psi, read backwards)

Nothing else about a solver is needed to differentiate its fixed point.
"""
import logging

import numpy as np

from foldcore import exceptions
from foldcore import linalg


LOG = logging.getLogger(__name__)

PASS_THRESHOLD = 1e-4


class Linearization(object):
    """The VJP closures of a step frozen at one point ``(x, c)``."""
    def __init__(self, x, c, vjp_state, vjp_param):
        self.x = x
        self.c = c
        self._vjp_state = vjp_state
        self._vjp_param = vjp_param

    def vjp_state(self, v):
        return self._vjp_state(v)

    def vjp_param(self, v):
        return self._vjp_param(v)

    def phi_transpose(self):
        """``Phi^T`` as an operator: ``v -> v^T Phi``."""
        n = len(self.x)
        return linalg.FunctionOperator(self.vjp_state, None, dim_in=n)


class DifferentiableStep(object):
    state_dim = None
    param_dim = None

    def forward(self, x, c):
        raise NotImplementedError('forward')

    def vjp_state(self, x, c, v):
        raise NotImplementedError('vjp_state')

    def vjp_param(self, x, c, v):
        raise NotImplementedError('vjp_param')

    def iterate(self, c):
        """Return ``x -> U(x, c)``.

        Steps that can precompute per-parameter data (a factorization, for
        instance) override this; solvers call it once per solve.
        """
        return lambda x: self.forward(x, c)

    def linearize(self, x, c):
        return Linearization(x, c,
                             lambda v: self.vjp_state(x, c, v),
                             lambda v: self.vjp_param(x, c, v))

    def check_point(self, x, c):
        x = linalg.as_vector(x, 'x', self.state_dim)
        c = linalg.as_vector(c, 'c', self.param_dim)
        return x, c

    def fixed_point_residual(self, x, c):
        return float(np.max(np.abs(self.forward(x, c) - x)))

    def kink_margin(self, x, c):
        """Distance from the nearest point where the step is not smooth."""
        return np.inf


class LinearStep(DifferentiableStep):
    """``U(x, c) = A x + B c + e``."""
    def __init__(self, A, B, e=None):
        self.A = linalg.as_matrix(A, 'A')
        self.B = linalg.as_matrix(B, 'B')
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise exceptions.ShapeMismatch('A', 'square', self.A.shape)
        if self.B.shape[0] != n:
            raise exceptions.ShapeMismatch('B', (n, '*'), self.B.shape)
        self.e = np.zeros(n) if e is None else linalg.as_vector(e, 'e', n)
        self.state_dim = n
        self.param_dim = self.B.shape[1]

    def forward(self, x, c):
        return self.A.dot(x) + self.B.dot(c) + self.e

    def vjp_state(self, x, c, v):
        return self.A.T.dot(v)

    def vjp_param(self, x, c, v):
        return self.B.T.dot(v)


class Readout(object):
    """A differentiable map from solver state to the layer's decision."""
    def value(self, x, c):
        raise NotImplementedError('value')

    def vjp_state(self, x, c, v):
        raise NotImplementedError('vjp_state')

    def vjp_param(self, x, c, v):
        raise NotImplementedError('vjp_param')


class IdentityReadout(Readout):
    def value(self, x, c):
        return x

    def vjp_state(self, x, c, v):
        return np.array(v, dtype=np.float64)

    def vjp_param(self, x, c, v):
        return np.zeros(len(c))


class SliceReadout(Readout):
    def __init__(self, start, stop):
        self.start = start
        self.stop = stop

    def value(self, x, c):
        return x[self.start:self.stop]

    def vjp_state(self, x, c, v):
        out = np.zeros(len(x))
        out[self.start:self.stop] = v
        return out

    def vjp_param(self, x, c, v):
        return np.zeros(len(c))


class AffineParamReadout(Readout):
    """``y = M x[state_slice] + m`` where ``M`` and ``m`` may live in ``c``.

    ``M`` is either the constant ``matrix`` or the block of ``c`` starting
    at ``matrix_offset``, stored row-major with shape ``block_shape``; with
    ``transpose`` set, ``M`` is the transpose of that block.  ``m`` is
    likewise the constant ``vector`` or the block at ``vector_offset``.
    """
    def __init__(self, state_slice, block_shape, matrix=None,
                 matrix_offset=None, transpose=False, vector=None,
                 vector_offset=None):
        if (matrix is None) == (matrix_offset is None):
            raise ValueError('Exactly one of matrix and matrix_offset '
                             'must be given')
        if (vector is None) == (vector_offset is None):
            raise ValueError('Exactly one of vector and vector_offset '
                             'must be given')
        self.state_slice = state_slice
        self.block_shape = tuple(block_shape)
        self.matrix = None if matrix is None else linalg.as_matrix(
            matrix, 'matrix', self.block_shape)
        self.matrix_offset = matrix_offset
        self.transpose = transpose
        self.vector = None if vector is None else linalg.as_vector(vector)
        self.vector_offset = vector_offset

    @property
    def out_dim(self):
        rows, cols = self.block_shape
        return cols if self.transpose else rows

    def _block(self, c):
        if self.matrix is not None:
            return self.matrix
        size = self.block_shape[0] * self.block_shape[1]
        start = self.matrix_offset
        return c[start:start + size].reshape(self.block_shape)

    def _matrix(self, c):
        block = self._block(c)
        return block.T if self.transpose else block

    def _vector(self, c):
        if self.vector is not None:
            return self.vector
        return c[self.vector_offset:self.vector_offset + self.out_dim]

    def value(self, x, c):
        return self._matrix(c).dot(x[self.state_slice]) + self._vector(c)

    def vjp_state(self, x, c, v):
        out = np.zeros(len(x))
        out[self.state_slice] = self._matrix(c).T.dot(v)
        return out

    def vjp_param(self, x, c, v):
        out = np.zeros(len(c))
        if self.matrix is None:
            grad = np.outer(v, x[self.state_slice])
            if self.transpose:
                grad = grad.T
            size = grad.size
            out[self.matrix_offset:self.matrix_offset + size] += grad.ravel()
        if self.vector is None:
            out[self.vector_offset:self.vector_offset + self.out_dim] += v
        return out


class StepJacobians(object):
    def __init__(self, phi, psi):
        self.phi = phi
        self.psi = psi


class StepCheckReport(object):
    def __init__(self, state_deviation, param_deviation,
                 threshold=PASS_THRESHOLD):
        self.state_deviation = state_deviation
        self.param_deviation = param_deviation
        self.threshold = threshold

    @property
    def max_deviation(self):
        return max(self.state_deviation, self.param_deviation)

    @property
    def passed(self):
        return self.max_deviation < self.threshold

    def __repr__(self):
        return 'StepCheckReport(state=%.3e, param=%.3e, passed=%s)' % (
            self.state_deviation, self.param_deviation, self.passed)


def fd_jacobian(step, x, c, wrt='state', h=1e-6):
    """Central-difference Jacobian of ``step.forward`` at ``(x, c)``.

    The probe for coordinate ``j`` is ``h * (1 + |entry_j|)``.
    """
    if h <= 0:
        raise ValueError('h must be positive, received %r' % h)
    if wrt not in ('state', 'param'):
        raise ValueError("wrt must be 'state' or 'param', received %r"
                         % wrt)
    x, c = step.check_point(x, c)
    base = x if wrt == 'state' else c
    columns = []
    for j in range(len(base)):
        probe = h * (1.0 + abs(base[j]))
        plus = base.copy()
        minus = base.copy()
        plus[j] += probe
        minus[j] -= probe
        try:
            if wrt == 'state':
                upper = step.forward(plus, c)
                lower = step.forward(minus, c)
            else:
                upper = step.forward(x, plus)
                lower = step.forward(x, minus)
        except exceptions.NonFiniteError:
            raise exceptions.NonFiniteProbe(j)
        if not (np.all(np.isfinite(upper)) and np.all(np.isfinite(lower))):
            raise exceptions.NonFiniteProbe(j)
        columns.append((upper - lower) / (2.0 * probe))
    if not columns:
        return np.zeros((step.state_dim, 0))
    return np.column_stack(columns)


def check_size(rows, cols, limit):
    size = rows * cols
    if size > limit:
        raise exceptions.TooLarge(size, limit)


def assemble_jacobians(step, x, c, limit=1e6):
    """Materialize ``Phi`` and ``Psi`` row by row from the step's VJPs."""
    x, c = step.check_point(x, c)
    n, p = len(x), len(c)
    check_size(n, p, limit)
    lin = step.linearize(x, c)
    phi = np.zeros((n, n))
    psi = np.zeros((n, p))
    for i in range(n):
        e = linalg.unit(n, i)
        phi[i] = lin.vjp_state(e)
        psi[i] = lin.vjp_param(e)
    return StepJacobians(phi, psi)


def check_step(step, x, c, h=1e-6):
    """Compare the analytic VJPs against central differences."""
    jac = assemble_jacobians(step, x, c)
    fd_state = fd_jacobian(step, x, c, wrt='state', h=h)
    fd_param = fd_jacobian(step, x, c, wrt='param', h=h)
    state_dev = float(np.max(np.abs(jac.phi - fd_state), initial=0.0))
    param_dev = float(np.max(np.abs(jac.psi - fd_param), initial=0.0))
    report = StepCheckReport(state_dev, param_dev)
    LOG.debug('check_step on %s: %r', type(step).__name__, report)
    return report
