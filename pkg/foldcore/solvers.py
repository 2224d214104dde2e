"""Iterative optimization algorithms exposed as update steps.

Every algorithm here is a :class:`foldcore.steps.DifferentiableStep`, so it
can be iterated by :func:`solve` and differentiated at its fixed point by
:mod:`foldcore.folding`.  The quadratic-programming algorithms live in
:mod:`foldcore.qp` and :mod:`foldcore.sqp`.

All objectives follow the minimization convention; maximization
problems are negated.
"""
import logging
import math

import numpy as np
import scipy.special

from foldcore import exceptions
from foldcore import linalg
from foldcore import prox
from foldcore.steps import AffineParamReadout
from foldcore.steps import DifferentiableStep
from foldcore.steps import Linearization


LOG = logging.getLogger(__name__)


class SolveReport(object):
    """Outcome of a forward solve.

    ``x_star`` is the full solver state; ``decision`` is what the layer
    hands to the rest of the model (the readout of the state, filled in
    by :class:`foldcore.folding.FoldedLayer`).
    """
    def __init__(self, x_star, iterations, fixed_point_residual, converged,
                 dual=None, decision=None):
        self.x_star = x_star
        self.iterations = iterations
        self.fixed_point_residual = fixed_point_residual
        self.converged = converged
        self.dual = dual
        self.decision = x_star if decision is None else decision

    def __repr__(self):
        return ('SolveReport(iterations=%s, fixed_point_residual=%.3e, '
                'converged=%s)' % (self.iterations,
                                   self.fixed_point_residual,
                                   self.converged))


def _inf_norm(v):
    return float(np.max(np.abs(v))) if len(v) else 0.0


def solve(step, c, x0=None, tol=1e-8, max_iter=5000):
    """Apply ``step`` repeatedly until successive iterates agree to tol."""
    if tol <= 0:
        raise ValueError('tol must be positive, received %r' % tol)
    c = linalg.as_vector(c, 'c', step.param_dim)
    if x0 is None:
        x = np.zeros(step.state_dim)
    else:
        x = linalg.as_vector(x0, 'x0', step.state_dim)
    update = step.iterate(c)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        x_next = update(x)
        diff = _inf_norm(x_next - x)
        x = x_next
        if diff < tol:
            converged = True
            break
    residual = _inf_norm(update(x) - x)
    report = SolveReport(x, iteration, residual, converged)
    if not converged:
        LOG.warning('%s did not converge in %d iterations (residual %.3e)',
                    type(step).__name__, max_iter, residual)
        raise exceptions.NoConvergence('solve', report, max_iter)
    LOG.debug('%s converged in %d iterations', type(step).__name__,
              iteration)
    return report


# Objectives.  grad is the gradient in x, hvp the Hessian-vector product in
# x and grad_param_vjp(x, c, v) = v^T d(grad)/dc.


class SmoothObjective(object):
    def value(self, x, c):
        raise NotImplementedError('value')

    def grad(self, x, c):
        raise NotImplementedError('grad')

    def hvp(self, x, c, v):
        raise NotImplementedError('hvp')

    def grad_param_vjp(self, x, c, v):
        raise NotImplementedError('grad_param_vjp')

    def hess(self, x, c):
        n = len(x)
        return np.column_stack([self.hvp(x, c, linalg.unit(n, j))
                                for j in range(n)])


class QuadraticObjective(SmoothObjective):
    """``1/2 x'Qx - c'x``; ``Q`` is a dense matrix or a diagonal vector."""
    def __init__(self, Q):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim == 1:
            self.diagonal = linalg.as_vector(Q, 'Q')
            self.Q = None
        else:
            self.Q = linalg.as_matrix(Q, 'Q')
            self.diagonal = None

    def _apply(self, x):
        if self.Q is None:
            return self.diagonal * x
        return self.Q.dot(x)

    def value(self, x, c):
        return 0.5 * np.dot(x, self._apply(x)) - np.dot(c, x)

    def grad(self, x, c):
        return self._apply(x) - c

    def hvp(self, x, c, v):
        return self._apply(v)

    def grad_param_vjp(self, x, c, v):
        return -np.asarray(v, dtype=np.float64)


class LeastSquaresObjective(QuadraticObjective):
    """``1/2 ||x - c||^2``."""
    def __init__(self, dim):
        super(LeastSquaresObjective, self).__init__(np.ones(dim))

    def value(self, x, c):
        return 0.5 * np.sum((x - c) ** 2)


class LinearObjective(SmoothObjective):
    """``-c'x``: maximizing a linear return."""
    def value(self, x, c):
        return -np.dot(c, x)

    def grad(self, x, c):
        return -np.asarray(c, dtype=np.float64)

    def hvp(self, x, c, v):
        return np.zeros(len(x))

    def grad_param_vjp(self, x, c, v):
        return -np.asarray(v, dtype=np.float64)


class EntropicTopKObjective(SmoothObjective):
    """``-c'x + sum(x log x)``: the smoothed top-k selection objective."""
    def value(self, x, c):
        return -np.dot(c, x) + np.sum(scipy.special.xlogy(x, x))

    def grad(self, x, c):
        with np.errstate(divide='ignore'):
            return -c + np.log(x) + 1.0

    def hvp(self, x, c, v):
        with np.errstate(divide='ignore'):
            return v / x

    def grad_param_vjp(self, x, c, v):
        return -np.asarray(v, dtype=np.float64)


class BilinearObjective(SmoothObjective):
    """Two linear programs coupled by a bilinear term.

    The state is ``[x; y]`` and the parameters ``[c; d]``::

        f = -c'x - x'Qy - d'y + mu/2 (||x||^2 + ||y||^2)
    """
    def __init__(self, Q, mu=0.0):
        self.Q = linalg.as_matrix(Q, 'Q')
        self.mu = mu
        self.nx, self.ny = self.Q.shape

    def _split(self, z):
        return z[:self.nx], z[self.nx:]

    def value(self, z, c):
        x, y = self._split(z)
        cx, cy = self._split(c)
        return (-np.dot(cx, x) - x.dot(self.Q).dot(y) - np.dot(cy, y) +
                0.5 * self.mu * np.dot(z, z))

    def grad(self, z, c):
        x, y = self._split(z)
        cx, cy = self._split(c)
        return np.concatenate([-cx - self.Q.dot(y) + self.mu * x,
                               -cy - self.Q.T.dot(x) + self.mu * y])

    def hvp(self, z, c, v):
        vx, vy = self._split(v)
        return np.concatenate([self.mu * vx - self.Q.dot(vy),
                               self.mu * vy - self.Q.T.dot(vx)])

    def grad_param_vjp(self, z, c, v):
        return -np.asarray(v, dtype=np.float64)


class ProxGradStep(DifferentiableStep):
    """``U(x, c) = prox(x - alpha * grad f(x, c))``.

    ``prox`` is any object with ``apply(s)`` and ``vjp(s, v)``; the
    projectors and proxes of :mod:`foldcore.prox` qualify.
    """
    def __init__(self, objective, prox_op, alpha, state_dim, param_dim):
        if alpha <= 0:
            raise ValueError('alpha must be positive, received %r' % alpha)
        self.objective = objective
        self.prox = prox_op
        self.alpha = alpha
        self.state_dim = state_dim
        self.param_dim = param_dim

    def _gradient_step(self, x, c):
        g = self.objective.grad(x, c)
        if not np.all(np.isfinite(g)):
            raise exceptions.NonFiniteGradient()
        return x - self.alpha * g

    def forward(self, x, c):
        return self.prox.apply(self._gradient_step(x, c))

    def _vjp_state(self, x, c, s, v):
        w = self.prox.vjp(s, v)
        return w - self.alpha * self.objective.hvp(x, c, w)

    def _vjp_param(self, x, c, s, v):
        w = self.prox.vjp(s, v)
        return -self.alpha * self.objective.grad_param_vjp(x, c, w)

    def vjp_state(self, x, c, v):
        return self._vjp_state(x, c, self._gradient_step(x, c), v)

    def vjp_param(self, x, c, v):
        return self._vjp_param(x, c, self._gradient_step(x, c), v)

    def linearize(self, x, c):
        s = self._gradient_step(x, c)
        return Linearization(x, c,
                             lambda v: self._vjp_state(x, c, s, v),
                             lambda v: self._vjp_param(x, c, s, v))

    def kink_margin(self, x, c):
        return self.prox.margin(self._gradient_step(x, c))


class PgdStep(ProxGradStep):
    """Projected gradient descent: the prox is a Euclidean projection."""
    def __init__(self, objective, projector, alpha, state_dim, param_dim):
        super(PgdStep, self).__init__(objective, projector, alpha,
                                      state_dim, param_dim)

    @property
    def projector(self):
        return self.prox


def pgd_step(objective, projector, x, c, alpha):
    x = linalg.as_vector(x, 'x')
    c = linalg.as_vector(c, 'c')
    return PgdStep(objective, projector, alpha, len(x), len(c)).forward(x, c)


def prox_gd_step(objective, prox_op, x, c, alpha):
    x = linalg.as_vector(x, 'x')
    c = linalg.as_vector(c, 'c')
    return ProxGradStep(objective, prox_op, alpha, len(x),
                        len(c)).forward(x, c)


# Fast dual proximal gradient for min 1/2||u - d||^2 + lam ||D u||_1.


def next_momentum(t):
    return (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0


def _dual_prox_grad(D, d, lam, L, w):
    u = D.T.dot(w) + d
    r = D.dot(u)
    s = r - L * w
    return w - r / L + prox.soft_threshold(s, L * lam) / L


def fdpg_step(state, D, d, lam, L=4.0):
    """One full FDPG update of ``(w, y, t)``.

    With ``L = 4`` this is the iteration for a differencing operator ``D``
    (``||D||^2 <= 4``); larger ``L`` keeps it valid for any ``D`` with
    ``||D||^2 <= L``.
    """
    w, y, t = state
    y_next = _dual_prox_grad(D, d, lam, L, w)
    t_next = next_momentum(t)
    w_next = y_next + ((t - 1.0) / t_next) * (y_next - y)
    return w_next, y_next, t_next


def lipschitz_bound(D, floor=4.0):
    return max(floor, float(np.linalg.norm(D, 2)) ** 2)


class FdpgStep(DifferentiableStep):
    """FDPG on the state ``(w, y)`` with the momentum coefficient frozen.

    The parameter vector is built from ``params``: ``'D'`` contributes the
    row-major entries of the ``m x n`` matrix ``D`` and ``'d'`` the signal,
    in that order.  Blocks left out of ``params`` must be given as
    constants.  ``momentum='none'`` folds plain dual proximal gradient.
    """
    def __init__(self, m, n, lam, L=4.0, momentum='frozen', frozen_t=100.0,
                 params=('D', 'd'), D=None, d=None):
        if lam < 0:
            raise ValueError('lambda must be nonnegative, received %r' % lam)
        if momentum not in ('frozen', 'none'):
            raise ValueError("momentum must be 'frozen' or 'none', "
                             "received %r" % momentum)
        self.m = m
        self.n = n
        self.lam = lam
        self.L = L
        self.params = tuple(params)
        self.D = None if 'D' in self.params else linalg.as_matrix(
            D, 'D', (m, n))
        self.d = None if 'd' in self.params else linalg.as_vector(d, 'd', n)
        if momentum == 'frozen':
            self.beta = (frozen_t - 1.0) / next_momentum(frozen_t)
        else:
            self.beta = 0.0
        self.state_dim = 2 * m
        self.param_dim = ((m * n if 'D' in self.params else 0) +
                          (n if 'd' in self.params else 0))

    def pack(self, D=None, d=None):
        parts = []
        if 'D' in self.params:
            parts.append(np.ravel(D))
        if 'd' in self.params:
            parts.append(d)
        return np.concatenate(parts) if parts else np.zeros(0)

    def unpack(self, c):
        offset = 0
        D = self.D
        if D is None:
            D = c[:self.m * self.n].reshape(self.m, self.n)
            offset = self.m * self.n
        d = self.d
        if d is None:
            d = c[offset:offset + self.n]
        return D, d

    def readout(self):
        """The primal solution ``u = D'w + d`` as a readout."""
        kwargs = {}
        if self.D is None:
            kwargs['matrix_offset'] = 0
        else:
            kwargs['matrix'] = self.D
        if self.d is None:
            kwargs['vector_offset'] = (self.m * self.n
                                       if 'D' in self.params else 0)
        else:
            kwargs['vector'] = self.d
        return AffineParamReadout(slice(0, self.m), (self.m, self.n),
                                  transpose=True, **kwargs)

    def _parts(self, x, c):
        D, d = self.unpack(c)
        w, y = x[:self.m], x[self.m:]
        u = D.T.dot(w) + d
        r = D.dot(u)
        s = r - self.L * w
        y_next = (w - r / self.L +
                  prox.soft_threshold(s, self.L * self.lam) / self.L)
        return D, w, y, u, s, y_next

    def forward(self, x, c):
        _, _, y, _, _, y_next = self._parts(x, c)
        w_next = (1.0 + self.beta) * y_next - self.beta * y
        return np.concatenate([w_next, y_next])

    def _backprop(self, x, c, v):
        D, w, y, u, s, _ = self._parts(x, c)
        a, b = v[:self.m], v[self.m:]
        g_ynext = (1.0 + self.beta) * a + b
        g_y = -self.beta * a
        g_w = g_ynext.copy()
        g_r = -g_ynext / self.L
        g_s = prox.soft_threshold_vjp(s, self.L * self.lam,
                                      g_ynext / self.L)
        g_r = g_r + g_s
        g_w -= self.L * g_s
        g_u = D.T.dot(g_r)
        g_D = np.outer(g_r, u)
        g_w += D.dot(g_u)
        g_D += np.outer(w, g_u)
        g_d = g_u
        g_state = np.concatenate([g_w, g_y])
        return g_state, self.pack(g_D, g_d)

    def vjp_state(self, x, c, v):
        return self._backprop(x, c, v)[0]

    def vjp_param(self, x, c, v):
        return self._backprop(x, c, v)[1]

    def kink_margin(self, x, c):
        s = self._parts(x, c)[4]
        return float(np.min(np.abs(np.abs(s) - self.L * self.lam)))


FDPG_POLISH_EVERY = 20


def _polish_dual(D, d, lam, L, w):
    # Fix the thresholding pattern of the current dual iterate and solve
    # the remaining linear conditions D_I (D'w + d) = 0 exactly.
    u = D.T.dot(w) + d
    r = D.dot(u)
    s = r - L * w
    active = np.abs(s) > L * lam
    inactive = ~active
    candidate = np.empty_like(w)
    candidate[active] = -lam * np.sign(s[active])
    if inactive.any():
        D_in = D[inactive]
        rhs = -D_in.dot(D[active].T.dot(candidate[active]) + d)
        sol = np.linalg.lstsq(D_in.dot(D_in.T), rhs, rcond=None)[0]
        candidate[inactive] = sol
    if not np.all(np.isfinite(candidate)):
        return None
    return candidate


def fdpg_solve(D, d, lam, L=None, tol=1e-8, max_iter=20000, restart=True,
               polish=True):
    """Solve ``min 1/2||u - d||^2 + lam ||D u||_1`` by FDPG.

    The momentum sequence ``t_k`` evolves as published; with ``restart`` it
    is reset whenever the momentum direction opposes the last step.  The
    returned state is ``(w, w)`` at the dual solution ``w``; the primal
    solution ``D'w + d`` is the report's ``decision``.
    """
    D = linalg.as_matrix(D, 'D')
    m, n = D.shape
    d = linalg.as_vector(d, 'd', n)
    if L is None:
        L = lipschitz_bound(D)

    def prox_grad_residual(w):
        return _inf_norm(_dual_prox_grad(D, d, lam, L, w) - w)

    w = np.zeros(m)
    y = np.zeros(m)
    t = 1.0
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        w_next, y_next, t_next = fdpg_step((w, y, t), D, d, lam, L)
        if restart and np.dot(w - y_next, y_next - y) > 0:
            w_next, t_next = y_next, 1.0
        diff = max(_inf_norm(w_next - w), _inf_norm(y_next - y))
        w, y, t = w_next, y_next, t_next
        if diff < tol and prox_grad_residual(y) < tol / 4.0:
            converged = True
            break
        if polish and iteration % FDPG_POLISH_EVERY == 0:
            candidate = _polish_dual(D, d, lam, L, y)
            if (candidate is not None and
                    prox_grad_residual(candidate) < tol / 4.0):
                y = candidate
                converged = True
                break
    state = np.concatenate([y, y])
    residual = prox_grad_residual(y)
    report = SolveReport(state, iteration, residual, converged, dual=y,
                         decision=D.T.dot(y) + d)
    if not converged:
        LOG.warning('fdpg_solve did not converge in %d iterations '
                    '(residual %.3e)', max_iter, residual)
        raise exceptions.NoConvergence('fdpg_solve', report, max_iter)
    LOG.debug('fdpg_solve converged in %d iterations', iteration)
    return report
