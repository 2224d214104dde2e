"""Quadratic programs and the ADMM iteration that solves them.

Standard form::

    minimize    1/2 x'Qx + p'x
    subject to  Ax = b,  x >= 0

General form adds inequalities ``Gx <= h`` and free variables; it is
reduced to standard form with slacks and the split ``x = x+ - x-``.

The ADMM update on the state ``(x, z, u)`` is

    [Q + rho I   A'] [x+]   [-p + rho (z - u)]
    [A           0 ] [nu] = [b               ]
    z+ = max(x+ + u, 0)
    u+ = u + x+ - z+

and the KKT matrix is factored once per parameter value.
"""
import logging

import numpy as np

from foldcore import exceptions
from foldcore import linalg
from foldcore.solvers import SolveReport
from foldcore.steps import DifferentiableStep
from foldcore.steps import Linearization
from foldcore.steps import Readout


LOG = logging.getLogger(__name__)

BLOCKS = ('Q', 'p', 'A', 'b')
POLISH_EVERY = 10


class QpStandard(object):
    def __init__(self, Q, p, A, b):
        self.Q = linalg.as_matrix(Q, 'Q')
        n = self.Q.shape[0]
        if self.Q.shape != (n, n):
            raise exceptions.ShapeMismatch('Q', 'square', self.Q.shape)
        self.p = linalg.as_vector(p, 'p', n)
        A = np.asarray(A, dtype=np.float64)
        if A.size == 0:
            A = np.zeros((0, n))
        self.A = linalg.as_matrix(A, 'A')
        if self.A.shape[1] != n:
            raise exceptions.ShapeMismatch('A', ('*', n), self.A.shape)
        self.b = linalg.as_vector(np.ravel(b), 'b', self.A.shape[0])

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    def objective(self, x):
        return 0.5 * x.dot(self.Q).dot(x) + self.p.dot(x)


class QpGeneral(object):
    """``min 1/2 x'Qx + p'x  s.t.  Ax = b, Gx <= h`` with free ``x``."""
    def __init__(self, Q, p, A=None, b=None, G=None, h=None):
        self.Q = linalg.as_matrix(Q, 'Q')
        n = self.Q.shape[0]
        if self.Q.shape != (n, n):
            raise exceptions.ShapeMismatch('Q', 'square', self.Q.shape)
        if np.max(np.abs(self.Q - self.Q.T), initial=0.0) > 1e-12:
            raise ValueError('Q must be symmetric')
        self.p = linalg.as_vector(p, 'p', n)
        self.A, self.b = self._constraint(A, b, n, 'A', 'b')
        self.G, self.h = self._constraint(G, h, n, 'G', 'h')

    @staticmethod
    def _constraint(M, rhs, n, name, rhs_name):
        if M is None:
            return np.zeros((0, n)), np.zeros(0)
        M = linalg.as_matrix(M, name)
        if M.shape[1] != n:
            raise exceptions.ShapeMismatch(name, ('*', n), M.shape)
        return M, linalg.as_vector(np.ravel(rhs), rhs_name, M.shape[0])

    @property
    def n(self):
        return self.Q.shape[0]

    def objective(self, x):
        return 0.5 * x.dot(self.Q).dot(x) + self.p.dot(x)


class StandardFormMap(object):
    """A general-form QP rewritten over ``z = [x+; x-; s] >= 0``.

    ``recover`` maps a standard-form point back to ``x`` and the
    ``pullback`` method carries gradients with respect to the standard-form
    data back to the general-form data.
    """
    def __init__(self, general):
        self.general = general
        n = general.n
        self.n = n
        self.m_eq = general.A.shape[0]
        self.m_in = general.G.shape[0]
        Q, G, A = general.Q, general.G, general.A
        zeros_ns = np.zeros((n, self.m_in))
        Q_std = np.block([
            [Q, -Q, zeros_ns],
            [-Q, Q, zeros_ns],
            [zeros_ns.T, zeros_ns.T, np.zeros((self.m_in, self.m_in))],
        ])
        p_std = np.concatenate([general.p, -general.p, np.zeros(self.m_in)])
        A_std = np.block([
            [A, -A, np.zeros((self.m_eq, self.m_in))],
            [G, -G, np.eye(self.m_in)],
        ])
        b_std = np.concatenate([general.b, general.h])
        self.standard = QpStandard(Q_std, p_std, A_std, b_std)

    def recover(self, z):
        return z[:self.n] - z[self.n:2 * self.n]

    def recover_vjp(self, v):
        return np.concatenate([v, -v, np.zeros(self.m_in)])

    def lift(self, x):
        """A standard-form point recovering ``x`` (slacks from ``h - Gx``)."""
        g = self.general
        return np.concatenate([np.maximum(x, 0), np.maximum(-x, 0),
                               g.h - g.G.dot(x)])

    def pullback(self, grads):
        n, m_eq = self.n, self.m_eq
        out = {}
        if 'Q' in grads:
            gQ = grads['Q']
            out['Q'] = (gQ[:n, :n] - gQ[:n, n:2 * n] - gQ[n:2 * n, :n] +
                        gQ[n:2 * n, n:2 * n])
        if 'p' in grads:
            gp = grads['p']
            out['p'] = gp[:n] - gp[n:2 * n]
        if 'A' in grads:
            gA = grads['A']
            out['A'] = gA[:m_eq, :n] - gA[:m_eq, n:2 * n]
            out['G'] = gA[m_eq:, :n] - gA[m_eq:, n:2 * n]
        if 'b' in grads:
            gb = grads['b']
            out['b'] = gb[:m_eq]
            out['h'] = gb[m_eq:]
        return out


def qp_general_to_standard(general):
    return StandardFormMap(general)


def kkt_matrix(Q, A, rho):
    n, m = Q.shape[0], A.shape[0]
    return np.block([[Q + rho * np.eye(n), A.T],
                     [A, np.zeros((m, m))]])


class _AdmmParts(object):
    # Intermediate values of one ADMM update, reused by the VJPs.
    __slots__ = ('Q', 'p', 'A', 'b', 'factor', 'z', 'u', 'x_next', 'nu',
                 'pre_projection', 'z_next', 'u_next')


class AdmmQpStep(DifferentiableStep):
    """One ADMM update on a standard-form QP.

    ``params`` selects which of the data blocks ``Q``, ``p``, ``A``, ``b``
    make up the parameter vector, always in that order and row-major.  The
    other blocks are fixed to the values in ``base``.
    """
    def __init__(self, base, rho=1.0, params=BLOCKS):
        if rho <= 0:
            raise ValueError('rho must be positive, received %r' % rho)
        for name in params:
            if name not in BLOCKS:
                raise ValueError('Unknown QP block: %r' % (name,))
        self.base = base
        self.rho = rho
        self.params = tuple(name for name in BLOCKS if name in params)
        self.n = base.n
        self.m = base.m
        self.state_dim = 3 * self.n
        self.param_dim = sum(self._block_size(name) for name in self.params)

    def _block_size(self, name):
        return {'Q': self.n * self.n, 'p': self.n,
                'A': self.m * self.n, 'b': self.m}[name]

    def pack(self, qp=None, **blocks):
        """Parameter vector from a QP (or from explicit blocks)."""
        qp = self.base if qp is None else qp
        parts = []
        for name in self.params:
            value = blocks.get(name, getattr(qp, name))
            parts.append(np.ravel(value))
        return np.concatenate(parts) if parts else np.zeros(0)

    def unpack(self, c):
        values = {name: getattr(self.base, name) for name in BLOCKS}
        offset = 0
        shapes = {'Q': (self.n, self.n), 'p': (self.n,),
                  'A': (self.m, self.n), 'b': (self.m,)}
        for name in self.params:
            size = self._block_size(name)
            values[name] = c[offset:offset + size].reshape(shapes[name])
            offset += size
        return values['Q'], values['p'], values['A'], values['b']

    def qp(self, c):
        return QpStandard(*self.unpack(c))

    def factor(self, c):
        Q, _, A, _ = self.unpack(c)
        return linalg.LuFactor(kkt_matrix(Q, A, self.rho),
                               error_cls=exceptions.SingularKkt)

    def _parts(self, state, c, factor=None):
        parts = _AdmmParts()
        parts.Q, parts.p, parts.A, parts.b = self.unpack(c)
        parts.factor = self.factor(c) if factor is None else factor
        n = self.n
        parts.z = state[n:2 * n]
        parts.u = state[2 * n:]
        rhs = np.concatenate([-parts.p + self.rho * (parts.z - parts.u),
                              parts.b])
        sol = parts.factor.solve(rhs)
        parts.x_next = sol[:n]
        parts.nu = sol[n:]
        parts.pre_projection = parts.x_next + parts.u
        parts.z_next = np.maximum(parts.pre_projection, 0.0)
        parts.u_next = parts.u + parts.x_next - parts.z_next
        return parts

    @staticmethod
    def _output(parts):
        return np.concatenate([parts.x_next, parts.z_next, parts.u_next])

    def forward(self, x, c):
        return self._output(self._parts(x, c))

    def iterate(self, c):
        factor = self.factor(c)
        return lambda x: self._output(self._parts(x, c, factor))

    def _kkt_backprop(self, parts, g_x_next, g_nu):
        # Cotangents on (x+, nu) back to (z, u) and the QP data.
        n = self.n
        w = parts.factor.solve_transpose(np.concatenate([g_x_next, g_nu]))
        w_top, w_bot = w[:n], w[n:]
        g_state = np.zeros(3 * n)
        g_state[n:2 * n] = self.rho * w_top
        g_state[2 * n:] = -self.rho * w_top
        grads = {
            'Q': -np.outer(w_top, parts.x_next),
            'p': -w_top,
            'A': -(np.outer(w_bot, parts.x_next) + np.outer(parts.nu, w_top)),
            'b': w_bot,
        }
        return g_state, grads

    def pack_grads(self, grads):
        parts = [np.ravel(grads[name]) for name in self.params]
        return np.concatenate(parts) if parts else np.zeros(0)

    def _backprop(self, parts, v):
        n = self.n
        v_x, v_z, v_u = v[:n], v[n:2 * n], v[2 * n:]
        g_x_next = v_x + v_u
        g_z_next = v_z - v_u
        g_u = v_u.copy()
        through = np.where(parts.pre_projection > 0, g_z_next, 0.0)
        g_x_next = g_x_next + through
        g_u = g_u + through
        g_state, grads = self._kkt_backprop(parts, g_x_next,
                                            np.zeros(self.m))
        g_state[2 * n:] += g_u
        return g_state, grads

    def vjp_state(self, x, c, v):
        return self._backprop(self._parts(x, c), v)[0]

    def vjp_param(self, x, c, v):
        return self.pack_grads(self._backprop(self._parts(x, c), v)[1])

    def linearize(self, x, c):
        parts = self._parts(x, c)
        return Linearization(
            x, c,
            lambda v: self._backprop(parts, v)[0],
            lambda v: self.pack_grads(self._backprop(parts, v)[1]))

    def multipliers(self, state, c):
        """Equality multipliers ``nu`` and bound multipliers ``-rho u``."""
        parts = self._parts(state, c)
        return parts.nu, -self.rho * parts.u

    def kink_margin(self, state, c):
        return float(np.min(np.abs(self._parts(state, c).pre_projection)))

    def state_from_solution(self, x, bound_multipliers):
        """The ADMM fixed point belonging to a primal-dual QP solution."""
        return np.concatenate([x, x, -bound_multipliers / self.rho])

    def decision_readout(self):
        return _PrimalReadout(self.n)

    def kkt_readout(self):
        return KktReadout(self)


class _PrimalReadout(Readout):
    def __init__(self, n):
        self.n = n

    def value(self, x, c):
        return x[:self.n]

    def vjp_state(self, x, c, v):
        out = np.zeros(len(x))
        out[:self.n] = v
        return out

    def vjp_param(self, x, c, v):
        return np.zeros(len(c))


class KktReadout(Readout):
    """``[x+; nu]`` from one KKT solve at the ADMM state.

    At a fixed point ``x+`` is the QP solution and ``nu`` the equality
    multipliers, so this readout differentiates both.
    """
    def __init__(self, step):
        self.step = step

    def value(self, x, c):
        parts = self.step._parts(x, c)
        return np.concatenate([parts.x_next, parts.nu])

    def _grads(self, x, c, v):
        n = self.step.n
        parts = self.step._parts(x, c)
        return self.step._kkt_backprop(parts, v[:n], v[n:])

    def vjp_state(self, x, c, v):
        return self._grads(x, c, v)[0]

    def vjp_param(self, x, c, v):
        return self.step.pack_grads(self._grads(x, c, v)[1])


def _polish(step, c, state):
    # Treat the positive part of z as the free set, solve the reduced KKT
    # system exactly and rebuild the ADMM state from the multipliers.
    Q, p, A, b = step.unpack(c)
    n, m = step.n, step.m
    z = state[n:2 * n]
    free = z > 0
    nf = int(np.count_nonzero(free))
    M = np.block([[Q[np.ix_(free, free)], A[:, free].T],
                  [A[:, free], np.zeros((m, m))]])
    try:
        sol = linalg.LuFactor(M).solve(
            np.concatenate([-p[free], b]))
    except exceptions.SingularMatrix:
        return None
    x = np.zeros(n)
    x[free] = sol[:nf]
    nu = sol[nf:]
    bound = Q.dot(x) + p + A.T.dot(nu)
    bound[free] = 0.0
    if np.any(x < 0) or np.any(bound < 0):
        return None
    return step.state_from_solution(x, bound)


def admm_qp_solve(step, c, x0=None, tol=1e-8, max_iter=5000, polish=True):
    """Iterate the ADMM step to a fixed point.

    With ``polish`` the active pattern of the iterate is tried every few
    iterations (as OSQP does); a polished state is kept only if it is a
    fixed point to within ``tol / 10``.
    """
    c = linalg.as_vector(c, 'c', step.param_dim)
    state = (np.zeros(step.state_dim) if x0 is None
             else linalg.as_vector(x0, 'x0', step.state_dim))
    factor = step.factor(c)

    def update(s):
        return step._output(step._parts(s, c, factor))

    def residual(s):
        return float(np.max(np.abs(update(s) - s)))

    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        nxt = update(state)
        diff = float(np.max(np.abs(nxt - state)))
        state = nxt
        if diff < tol:
            converged = True
            break
        if polish and iteration % POLISH_EVERY == 0:
            candidate = _polish(step, c, state)
            if candidate is not None and residual(candidate) < tol / 10.0:
                state = candidate
                converged = True
                break
    parts = step._parts(state, c, factor)
    fp_residual = float(np.max(np.abs(step._output(parts) - state)))
    report = SolveReport(state, iteration, fp_residual, converged,
                         dual=parts.nu, decision=state[:step.n])
    if not converged:
        LOG.warning('admm_qp_solve did not converge in %d iterations '
                    '(residual %.3e)', max_iter, fp_residual)
        raise exceptions.NoConvergence('admm_qp_solve', report, max_iter)
    LOG.debug('admm_qp_solve converged in %d iterations', iteration)
    return report


def admm_qp_step(qp, state, rho=1.0):
    """One ADMM update on ``qp`` from ``state = (x, z, u)``."""
    step = AdmmQpStep(qp, rho=rho, params=())
    return step.forward(linalg.as_vector(state, 'state', step.state_dim),
                        np.zeros(0))
