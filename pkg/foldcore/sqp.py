"""Sequential quadratic programming as a differentiable update step.

One SQP update maps ``(x, lam)`` to ``(x + alpha d, lam+)`` where
``(d, mu)`` solve the subproblem

    minimize    grad f(x)'d + d' H d
    subject to  h(x) + Jh(x) d = 0,  g(x) + Jg(x) d <= 0

with ``H`` the Hessian of the Lagrangian at ``(x, lam)``.  The dual update
is ``lam+ = alpha (mu - lam)`` ('verbatim') or ``lam + alpha (mu - lam)``
('damped').

The subproblem is solved by ADMM and differentiated through its own
folded layer, so the backward pass of this step nests a second backward
pass.  Constraints are linear or quadratic and the objective Hessian is
constant, which makes every second derivative the step needs exact.
"""
import logging

import numpy as np
import scipy.optimize

from foldcore import exceptions
from foldcore import linalg
from foldcore import qp as qplib
from foldcore import solvers
from foldcore.folding import FoldedLayer
from foldcore.steps import DifferentiableStep
from foldcore.steps import Linearization


LOG = logging.getLogger(__name__)


class QuadraticConstraint(object):
    """``1/2 x'Px + q'x + r``; ``P`` may be omitted for linear constraints."""
    def __init__(self, n, P=None, q=None, r=0.0):
        self.P = (np.zeros((n, n)) if P is None
                  else linalg.as_matrix(P, 'P', (n, n)))
        if np.max(np.abs(self.P - self.P.T), initial=0.0) > 1e-12:
            raise ValueError('Constraint curvature P must be symmetric')
        self.q = np.zeros(n) if q is None else linalg.as_vector(q, 'q', n)
        self.r = float(r)

    def value(self, x):
        return 0.5 * x.dot(self.P).dot(x) + self.q.dot(x) + self.r

    def grad(self, x):
        return self.P.dot(x) + self.q


class SqpProblem(object):
    """``min f(x, c)  s.t.  g_i(x) <= 0, h_j(x) = 0`` (and ``x >= 0``).

    ``objective`` is a :class:`foldcore.solvers.SmoothObjective` whose
    Hessian does not depend on ``x`` or ``c``.
    """
    def __init__(self, objective, n, param_dim, ineq=(), eq=(),
                 nonneg=False):
        self.objective = objective
        self.n = n
        self.param_dim = param_dim
        self.ineq = list(ineq)
        self.eq = list(eq)
        self.nonneg = nonneg

    @property
    def mg(self):
        return len(self.ineq)

    @property
    def mh(self):
        return len(self.eq)

    def g(self, x):
        return np.array([con.value(x) for con in self.ineq])

    def h(self, x):
        return np.array([con.value(x) for con in self.eq])

    def jac_g(self, x):
        return np.array([con.grad(x) for con in self.ineq]).reshape(
            self.mg, self.n)

    def jac_h(self, x):
        return np.array([con.grad(x) for con in self.eq]).reshape(
            self.mh, self.n)

    def lagrangian_hessian(self, x, c, lam):
        H = self.objective.hess(x, c)
        for weight, con in zip(lam[:self.mg], self.ineq):
            H = H + weight * con.P
        for weight, con in zip(lam[self.mg:], self.eq):
            H = H + weight * con.P
        return H

    def multipliers(self, x, c, active_tol=1e-7):
        """Least-squares KKT multipliers ``[mu_g; mu_h]`` at ``x``.

        Inequalities and bounds count as active within ``active_tol``.
        """
        g = self.g(x)
        active_g = np.abs(g) <= active_tol
        columns = [self.jac_g(x)[active_g].T, self.jac_h(x).T]
        active_bounds = (x <= active_tol if self.nonneg
                         else np.zeros(self.n, dtype=bool))
        columns.append(-np.eye(self.n)[:, active_bounds])
        system = np.hstack(columns)
        grad = self.objective.grad(x, c)
        if system.shape[1]:
            sol = np.linalg.lstsq(system, -grad, rcond=None)[0]
        else:
            sol = np.zeros(0)
        mu = np.zeros(self.mg + self.mh)
        n_active = int(np.count_nonzero(active_g))
        mu[:self.mg][active_g] = np.maximum(sol[:n_active], 0.0)
        mu[self.mg:] = sol[n_active:n_active + self.mh]
        return mu


class _Subproblem(object):
    __slots__ = ('x', 'lam', 'c', 'H', 'grad_f', 'g', 'h', 'Jg', 'Jh',
                 'form', 'inner_step', 'inner_c', 'inner_state', 'd', 'mu')


class SqpStep(DifferentiableStep):
    def __init__(self, problem, alpha=0.5, dual_update='verbatim', rho=1.0,
                 inner_tol=1e-12, inner_max_iter=20000,
                 backward_tol=1e-11, backward_max_iter=5000,
                 krylov_restart=30):
        if not 0 < alpha <= 1:
            raise ValueError('alpha must lie in (0, 1], received %r' % alpha)
        if dual_update not in ('verbatim', 'damped'):
            raise ValueError("dual_update must be 'verbatim' or 'damped', "
                             "received %r" % dual_update)
        self.problem = problem
        self.alpha = alpha
        self.dual_update = dual_update
        self.rho = rho
        self.inner_tol = inner_tol
        self.inner_max_iter = inner_max_iter
        self.backward_tol = backward_tol
        self.backward_max_iter = backward_max_iter
        self.krylov_restart = krylov_restart
        self.state_dim = problem.n + problem.mg + problem.mh
        self.param_dim = problem.param_dim

    def split(self, state):
        n = self.problem.n
        return state[:n], state[n:]

    def dual_fixed_point(self, mu):
        """The ``lam`` a converged iteration carries for multipliers ``mu``."""
        if self.dual_update == 'verbatim':
            return self.alpha * mu / (1.0 + self.alpha)
        return np.array(mu, dtype=np.float64)

    def _build(self, x, lam, c):
        prob = self.problem
        sub = _Subproblem()
        sub.x, sub.lam, sub.c = x, lam, c
        sub.H = prob.lagrangian_hessian(x, c, lam)
        sub.grad_f = prob.objective.grad(x, c)
        sub.g, sub.h = prob.g(x), prob.h(x)
        sub.Jg, sub.Jh = prob.jac_g(x), prob.jac_h(x)
        n, mg, mh = prob.n, prob.mg, prob.mh
        if prob.nonneg:
            # Work in e = x + d >= 0 with slacks for the inequalities.
            Q = np.zeros((n + mg, n + mg))
            Q[:n, :n] = 2.0 * sub.H
            p = np.concatenate([sub.grad_f - 2.0 * sub.H.dot(x),
                                np.zeros(mg)])
            A = np.block([[sub.Jg, np.eye(mg)],
                          [sub.Jh, np.zeros((mh, mg))]])
            b = np.concatenate([sub.Jg.dot(x) - sub.g,
                                sub.Jh.dot(x) - sub.h])
            sub.form = None
            standard = qplib.QpStandard(Q, p, A, b)
        else:
            general = qplib.QpGeneral(2.0 * sub.H, sub.grad_f, A=sub.Jh,
                                      b=-sub.h, G=sub.Jg, h=-sub.g)
            sub.form = qplib.qp_general_to_standard(general)
            standard = sub.form.standard
        sub.inner_step = qplib.AdmmQpStep(standard, rho=self.rho)
        sub.inner_c = sub.inner_step.pack()
        return sub

    def _solve(self, x, lam, c):
        sub = self._build(x, lam, c)
        step = sub.inner_step
        try:
            report = qplib.admm_qp_solve(step, sub.inner_c,
                                         tol=self.inner_tol,
                                         max_iter=self.inner_max_iter)
        except exceptions.NoConvergence as e:
            # The projected block is the feasible-side iterate.
            z = e.report.x_star[step.n:2 * step.n]
            residual = float(np.max(np.abs(step.base.A.dot(z) -
                                           step.base.b), initial=0.0))
            if residual > np.sqrt(self.inner_tol):
                raise exceptions.SubproblemInfeasible(residual)
            raise
        sub.inner_state = report.x_star
        z = report.x_star[:step.n]
        nu = report.dual
        prob = self.problem
        if sub.form is None:
            sub.d = z[:prob.n] - x
            sub.mu = nu
        else:
            sub.d = sub.form.recover(z)
            sub.mu = np.concatenate([nu[prob.mh:], nu[:prob.mh]])
        return sub

    def _output(self, sub):
        x_next = sub.x + self.alpha * sub.d
        if self.dual_update == 'verbatim':
            lam_next = self.alpha * (sub.mu - sub.lam)
        else:
            lam_next = sub.lam + self.alpha * (sub.mu - sub.lam)
        return np.concatenate([x_next, lam_next])

    def forward(self, state, c):
        x, lam = self.split(state)
        return self._output(self._solve(x, lam, c))

    def inner_layer(self, sub):
        step = sub.inner_step
        return FoldedLayer(
            lambda c, x0=None: qplib.admm_qp_solve(
                step, c, x0=x0, tol=self.inner_tol,
                max_iter=self.inner_max_iter),
            step, readout=step.kkt_readout(), backward_method='krylov',
            backward_tol=self.backward_tol,
            backward_max_iter=self.backward_max_iter,
            forward_tol=self.inner_tol, krylov_restart=self.krylov_restart)

    def _backprop(self, sub, layer, v):
        prob = self.problem
        n, mg, mh = prob.n, prob.mg, prob.mh
        a_x, a_lam = v[:n], v[n:]
        g_x = a_x.copy()
        g_d = self.alpha * a_x
        g_mu = self.alpha * a_lam
        if self.dual_update == 'verbatim':
            g_lam = -self.alpha * a_lam
        else:
            g_lam = (1.0 - self.alpha) * a_lam

        step = sub.inner_step
        if sub.form is None:
            g_z = np.zeros(step.n)
            g_z[:n] = g_d
            g_x -= g_d
            g_nu = g_mu
        else:
            g_z = sub.form.recover_vjp(g_d)
            g_nu = np.concatenate([g_mu[mg:], g_mu[:mg]])
        inner = layer.backward_vjp(sub.inner_c, sub.inner_state,
                                   np.concatenate([g_z, g_nu]))
        GQ, Gp, GA, Gb = step.unpack(inner.grad_c)

        # Gradients with respect to the subproblem data.
        if sub.form is None:
            g_H = 2.0 * GQ[:n, :n]
            g_grad_f = Gp[:n].copy()
            g_H -= 2.0 * np.outer(Gp[:n], sub.x)
            g_x -= 2.0 * sub.H.dot(Gp[:n])
            g_Jg = GA[:mg, :n] + np.outer(Gb[:mg], sub.x)
            g_Jh = GA[mg:, :n] + np.outer(Gb[mg:], sub.x)
            g_x += sub.Jg.T.dot(Gb[:mg]) + sub.Jh.T.dot(Gb[mg:])
            g_gval = -Gb[:mg]
            g_hval = -Gb[mg:]
        else:
            general = sub.form.pullback({'Q': GQ, 'p': Gp, 'A': GA,
                                         'b': Gb})
            g_H = 2.0 * general['Q']
            g_grad_f = general['p']
            g_Jh = general['A']
            g_Jg = general['G']
            g_hval = -general['b']
            g_gval = -general['h']

        # Subproblem data back to (x, lam, c).
        g_x += prob.objective.hvp(sub.x, sub.c, g_grad_f)
        g_c = prob.objective.grad_param_vjp(sub.x, sub.c, g_grad_f)
        g_x += sub.Jg.T.dot(g_gval) + sub.Jh.T.dot(g_hval)
        for i, con in enumerate(prob.ineq):
            g_x += con.P.dot(g_Jg[i])
            g_lam[i] += np.sum(g_H * con.P)
        for j, con in enumerate(prob.eq):
            g_x += con.P.dot(g_Jh[j])
            g_lam[mg + j] += np.sum(g_H * con.P)
        return np.concatenate([g_x, g_lam]), np.asarray(g_c)

    def linearize(self, state, c):
        x, lam = self.split(state)
        sub = self._solve(x, lam, c)
        layer = self.inner_layer(sub)
        return Linearization(state, c,
                             lambda v: self._backprop(sub, layer, v)[0],
                             lambda v: self._backprop(sub, layer, v)[1])

    def kink_margin(self, state, c):
        x, lam = self.split(state)
        sub = self._solve(x, lam, c)
        return sub.inner_step.kink_margin(sub.inner_state, sub.inner_c)

    def vjp_state(self, state, c, v):
        return self.linearize(state, c).vjp_state(v)

    def vjp_param(self, state, c, v):
        return self.linearize(state, c).vjp_param(v)


def sqp_step(problem, x, lam, c, alpha=0.5, dual_update='verbatim'):
    """One SQP update; returns ``(x+, lam+)``."""
    step = SqpStep(problem, alpha=alpha, dual_update=dual_update)
    state = np.concatenate([linalg.as_vector(x, 'x', problem.n),
                            linalg.as_vector(lam, 'lam',
                                             problem.mg + problem.mh)])
    out = step.forward(state, linalg.as_vector(c, 'c', problem.param_dim))
    return step.split(out)


def sqp_solve(step, c, x0, lam0=None, tol=1e-8, max_iter=500):
    """Iterate the SQP step; the report's decision is ``x``, dual ``lam``."""
    prob = step.problem
    lam0 = np.zeros(prob.mg + prob.mh) if lam0 is None else lam0
    state0 = np.concatenate([linalg.as_vector(x0, 'x0', prob.n),
                             linalg.as_vector(lam0, 'lam0',
                                              prob.mg + prob.mh)])
    report = solvers.solve(step, c, x0=state0, tol=tol, max_iter=max_iter)
    x, lam = step.split(report.x_star)
    report.decision = x
    report.dual = lam
    return report


def slsqp_solve(step, c, x0=None, tol=1e-8, max_iter=500):
    """Black-box forward solve: SLSQP, multiplier recovery, SQP polish.

    scipy's SLSQP finds the optimum; the SQP iteration started from it and
    the recovered multipliers then settles on the exact fixed point of
    ``step``.
    """
    prob = step.problem
    c = linalg.as_vector(c, 'c', prob.param_dim)
    if x0 is None:
        x0 = np.full(prob.n, 1.0 / prob.n) if prob.nonneg else np.zeros(
            prob.n)
    constraints = []
    if prob.mg:
        constraints.append({'type': 'ineq',
                            'fun': lambda x: -prob.g(x),
                            'jac': lambda x: -prob.jac_g(x)})
    if prob.mh:
        constraints.append({'type': 'eq',
                            'fun': prob.h,
                            'jac': prob.jac_h})
    bounds = [(0.0, None)] * prob.n if prob.nonneg else None
    result = scipy.optimize.minimize(
        lambda x: prob.objective.value(x, c), x0,
        jac=lambda x: prob.objective.grad(x, c), method='SLSQP',
        bounds=bounds, constraints=constraints,
        options={'ftol': 1e-15, 'maxiter': 1000})
    if not result.success:
        LOG.warning('SLSQP reported: %s; polishing from its last iterate',
                    result.message)
    x = np.asarray(result.x, dtype=np.float64)
    if prob.nonneg:
        x = np.maximum(x, 0.0)
    mu = prob.multipliers(x, c)
    return sqp_solve(step, c, x, step.dual_fixed_point(mu), tol=tol,
                     max_iter=max_iter)
