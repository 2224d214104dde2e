"""Fixed-point folding: differentiate a solver through its update step.

A :class:`FoldedLayer` pairs a black-box forward solver with the
:class:`foldcore.steps.DifferentiableStep` whose fixed point it finds.  The
forward pass is delegated to the solver untouched.  The backward pass
solves the differential fixed-point system

    v' (I - Phi) = g'        then        g' dx*/dc = v' Psi

using nothing but the step's vector-Jacobian products, either by linear
fixed-point iteration (what backpropagating an unrolled solver does
implicitly) or by GMRES.

``jacobian_dense``, ``unfold_jacobian`` and ``rate_study`` materialize
Jacobians and are meant for small problems and equivalence checks.
"""
import logging

import numpy as np

from foldcore import exceptions
from foldcore import linalg
from foldcore import linear_solvers
from foldcore.steps import IdentityReadout
from foldcore.steps import assemble_jacobians
from foldcore.steps import check_size


LOG = logging.getLogger(__name__)

FORWARD_SLACK = 10.0
BACKWARD_GATE = 100.0
RATE_FLOOR = 1e-13


class BackwardReport(object):
    def __init__(self, grad_c, iterations, residual, converged,
                 per_iter_residuals, method, v=None, rho_estimate=None):
        self.grad_c = grad_c
        self.iterations = iterations
        self.residual = residual
        self.converged = converged
        self.per_iter_residuals = per_iter_residuals
        self.method = method
        self.v = v
        self.rho_estimate = rho_estimate

    def __repr__(self):
        return ('BackwardReport(method=%r, iterations=%s, residual=%.3e, '
                'converged=%s)' % (self.method, self.iterations,
                                   self.residual, self.converged))


class TrajectoryRecord(object):
    """Forward and backward errors of an unrolled run from a start point.

    ``rows`` holds ``(iter, forward_rel_err, backward_rel_err)``; both
    errors are relative L1 distances to the fixed point and to the folded
    Jacobian.
    """
    def __init__(self, rows, rho_estimate, x0_mode):
        self.rows = rows
        self.rho_estimate = rho_estimate
        self.x0_mode = x0_mode

    @property
    def forward_errors(self):
        return np.array([row[1] for row in self.rows])

    @property
    def backward_errors(self):
        return np.array([row[2] for row in self.rows])

    def decay_ratio(self, tail=None):
        """Geometric mean of late successive backward-error ratios.

        Errors at or below round-off are dropped first; ``tail`` defaults
        to the last half of the remaining ratios.
        """
        errors = self.backward_errors
        errors = errors[errors > RATE_FLOOR]
        if errors.size < 3:
            raise exceptions.InsufficientData(errors.size, required=3)
        ratios = errors[1:] / errors[:-1]
        if tail is None:
            tail = max(1, ratios.size // 2)
        return float(np.exp(np.mean(np.log(ratios[-tail:]))))


def _relative_l1(a, b):
    scale = np.sum(np.abs(b))
    diff = np.sum(np.abs(a - b))
    return float(diff / scale) if scale > 0 else float(diff)


class FoldedLayer(object):
    """A solver whose fixed point is differentiated by folding.

    ``forward_solver(c, x0=None)`` returns a
    :class:`foldcore.solvers.SolveReport` whose ``x_star`` is a fixed point
    of ``step``.  ``readout`` maps that state to the layer's output; the
    backward pass accepts gradients with respect to the readout.

    When ``probe`` is given, the forward solver is run once at that
    parameter on construction and its answer checked against the step.
    """
    def __init__(self, forward_solver, step, readout=None,
                 backward_method='krylov', backward_tol=1e-10,
                 backward_max_iter=5000, forward_tol=1e-8,
                 krylov_restart=linear_solvers.DEFAULT_RESTART, probe=None,
                 materialize_limit=1e6):
        if backward_method not in ('krylov', 'lfpi'):
            raise ValueError("backward_method must be 'krylov' or 'lfpi', "
                             "received %r" % backward_method)
        self.forward_solver = forward_solver
        self.step = step
        self.readout = IdentityReadout() if readout is None else readout
        self.backward_method = backward_method
        self.backward_tol = backward_tol
        self.backward_max_iter = backward_max_iter
        self.forward_tol = forward_tol
        self.krylov_restart = krylov_restart
        self.materialize_limit = materialize_limit
        if probe is not None:
            self.self_test(probe)

    @classmethod
    def from_options(cls, forward_solver, step, options, readout=None,
                     probe=None):
        return cls(forward_solver, step, readout=readout,
                   backward_method=options.backward_method,
                   backward_tol=options.backward_tol,
                   backward_max_iter=options.backward_max_iter,
                   forward_tol=options.tol,
                   krylov_restart=options.krylov_restart, probe=probe,
                   materialize_limit=options.materialize_limit)

    @property
    def state_dim(self):
        return self.step.state_dim

    @property
    def param_dim(self):
        return self.step.param_dim

    def forward(self, c, x0=None):
        c = linalg.as_vector(c, 'c', self.param_dim)
        if x0 is None:
            report = self.forward_solver(c)
        else:
            report = self.forward_solver(c, x0=x0)
        report.fixed_point_residual = self.step.fixed_point_residual(
            report.x_star, c)
        report.decision = self.readout.value(report.x_star, c)
        return report

    def self_test(self, c):
        report = self.forward(c)
        limit = FORWARD_SLACK * self.forward_tol
        if report.fixed_point_residual > limit:
            raise exceptions.NotAFixedPoint(report.fixed_point_residual,
                                            limit)
        return report

    def _check_fixed_point(self, x_star, c):
        residual = self.step.fixed_point_residual(x_star, c)
        limit = BACKWARD_GATE * self.forward_tol
        if residual > limit:
            LOG.warning('Refusing backward pass: fixed-point residual %.3e '
                        'exceeds %.3e', residual, limit)
            raise exceptions.NotAFixedPoint(residual, limit)

    def rho_estimate(self, c, x_star):
        """Power-iteration estimate of the spectral radius of ``Phi``."""
        op = self.step.linearize(x_star, c).phi_transpose()
        try:
            return linalg.spectral_radius(op)
        except exceptions.NoConvergence as e:
            return e.report

    def backward_vjp(self, c, x_star, g, method=None):
        """``g' dy*/dc`` for the readout ``y*`` of the fixed point."""
        method = self.backward_method if method is None else method
        if method not in ('krylov', 'lfpi'):
            raise ValueError("method must be 'krylov' or 'lfpi', received %r"
                             % method)
        x_star, c = self.step.check_point(x_star, c)
        g = linalg.as_vector(g, 'g')
        self._check_fixed_point(x_star, c)
        g_state = self.readout.vjp_state(x_star, c, g)
        g_direct = self.readout.vjp_param(x_star, c, g)
        lin = self.step.linearize(x_star, c)
        phi_t = lin.phi_transpose()
        if method == 'lfpi':
            try:
                solved = linear_solvers.lfpi(
                    phi_t, g_state, z0=g_state, tol=self.backward_tol,
                    max_iter=self.backward_max_iter)
            except exceptions.Divergence as e:
                e.rho_estimate = self.rho_estimate(c, x_star)
                LOG.warning('%s', e)
                raise
            if not solved.converged:
                rho = self.rho_estimate(c, x_star)
                report = BackwardReport(None, solved.iterations,
                                        solved.residual_norm, False,
                                        solved.per_iter_residuals, method,
                                        v=solved.solution, rho_estimate=rho)
                LOG.warning('Backward LFPI did not converge; estimated '
                            'spectral radius %.6g', rho)
                raise exceptions.NoConvergence('backward lfpi', report,
                                               solved.iterations)
        else:
            try:
                solved = linear_solvers.krylov_solve(
                    linalg.identity_minus(phi_t), g_state, x0=g_state,
                    tol=self.backward_tol, max_iter=self.backward_max_iter,
                    restart=self.krylov_restart)
            except exceptions.NoConvergence as e:
                rho = self.rho_estimate(c, x_star)
                inner = e.report
                report = BackwardReport(None, inner.iterations,
                                        inner.residual_norm, False,
                                        inner.per_iter_residuals, method,
                                        v=inner.solution, rho_estimate=rho)
                LOG.warning('Backward GMRES did not converge; estimated '
                            'spectral radius %.6g', rho)
                raise exceptions.NoConvergence('backward krylov', report,
                                               inner.iterations)
        v = solved.solution
        grad_c = linalg.check_finite(lin.vjp_param(v) + g_direct,
                                     'backward gradient')
        return BackwardReport(grad_c, solved.iterations, solved.residual_norm,
                              True, solved.per_iter_residuals, method, v=v)

    def step_jacobians(self, c, x_star):
        return assemble_jacobians(self.step, x_star, c,
                                  limit=self.materialize_limit)

    def jacobian_dense(self, c, x_star):
        """``dx*/dc`` of the full state from ``(I - Phi) J = Psi``."""
        jac = self.step_jacobians(c, x_star)
        n = jac.phi.shape[0]
        try:
            factor = linalg.lu_factor(np.eye(n) - jac.phi)
        except exceptions.SingularMatrix as e:
            rho = self.rho_estimate(c, x_star)
            raise exceptions.SingularSystem(e.pivot_index, e.pivot,
                                            rho_estimate=rho)
        if jac.psi.shape[1] == 0:
            return np.zeros((n, 0))
        return factor.solve(jac.psi)

    def readout_jacobians(self, c, x_star):
        """Dense Jacobians of the readout in the state and in ``c``."""
        x_star, c = self.step.check_point(x_star, c)
        out_dim = len(self.readout.value(x_star, c))
        check_size(out_dim, max(len(x_star), len(c)),
                   self.materialize_limit)
        rows_x = np.zeros((out_dim, len(x_star)))
        rows_c = np.zeros((out_dim, len(c)))
        for i in range(out_dim):
            e = linalg.unit(out_dim, i)
            rows_x[i] = self.readout.vjp_state(x_star, c, e)
            rows_c[i] = self.readout.vjp_param(x_star, c, e)
        return rows_x, rows_c

    def decision_jacobian(self, c, x_star):
        """``dy*/dc`` for the readout ``y*``."""
        rows_x, rows_c = self.readout_jacobians(c, x_star)
        return rows_x.dot(self.jacobian_dense(c, x_star)) + rows_c

    def unfold_jacobian(self, c, x_star, k):
        """``J_k`` of the recursion ``J_0 = Psi``, ``J_{j+1} = Phi J_j + Psi``.

        This is the Jacobian that backpropagating ``k`` unrolled steps
        taken at the fixed point would produce.
        """
        if k < 0:
            raise ValueError('k must be nonnegative, received %r' % k)
        jac = self.step_jacobians(c, x_star)
        J = jac.psi.copy()
        for _ in range(k):
            J = jac.phi.dot(J) + jac.psi
        return J

    def rate_study(self, c, x0_mode='fixed_point', k=200, seed=0,
                   x_star=None):
        """Track the unrolled forward and backward errors over ``k`` steps.

        From ``x_0`` the recursion ``J_0 = Psi(x_0)``,
        ``J_j = Phi(x_j) J_{j-1} + Psi(x_j)`` is carried along the forward
        trajectory ``x_{j+1} = U(x_j, c)``.  ``x0_mode='random'`` starts
        from the fixed point scaled entrywise by a factor in ``[0.5, 1.5]``
        and shifted by up to ``0.1``, both drawn with ``seed``.
        """
        if x0_mode not in ('fixed_point', 'random'):
            raise ValueError("x0_mode must be 'fixed_point' or 'random', "
                             "received %r" % x0_mode)
        c = linalg.as_vector(c, 'c', self.param_dim)
        if x_star is None:
            x_star = self.forward(c).x_star
        J_star = self.jacobian_dense(c, x_star)
        rho = self.rho_estimate(c, x_star)
        if x0_mode == 'fixed_point':
            x = np.array(x_star, dtype=np.float64)
        else:
            rng = np.random.RandomState(seed)
            # Positive shifts keep entropic states inside their domain.
            x = (x_star * rng.uniform(0.5, 1.5, len(x_star)) +
                 0.1 * rng.uniform(0.0, 1.0, len(x_star)))
        update = self.step.iterate(c)
        rows = []
        fixed_jac = None
        J = None
        for j in range(k + 1):
            if x0_mode == 'fixed_point':
                if fixed_jac is None:
                    fixed_jac = self.step_jacobians(c, x)
                jac = fixed_jac
            else:
                jac = self.step_jacobians(c, x)
            J = jac.psi.copy() if J is None else jac.phi.dot(J) + jac.psi
            rows.append((j, _relative_l1(x, x_star),
                         _relative_l1(J, J_star)))
            x = update(x)
        LOG.debug('rate_study (%s) final errors: forward %.3e, backward '
                  '%.3e', x0_mode, rows[-1][1], rows[-1][2])
        return TrajectoryRecord(rows, rho, x0_mode)


def fd_vjp(layer, c, g, h=1e-5):
    """Central differences of ``g' y*(c)`` through full forward solves."""
    c = linalg.as_vector(c, 'c', layer.param_dim)
    g = linalg.as_vector(g, 'g')
    out = np.zeros(len(c))
    for j in range(len(c)):
        probe = h * (1.0 + abs(c[j]))
        plus = c.copy()
        minus = c.copy()
        plus[j] += probe
        minus[j] -= probe
        upper = np.dot(g, layer.forward(plus).decision)
        lower = np.dot(g, layer.forward(minus).decision)
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise exceptions.NonFiniteProbe(j)
        out[j] = (upper - lower) / (2.0 * probe)
    return out


def forward(layer, c, x0=None):
    return layer.forward(c, x0=x0)


def backward_vjp(layer, c, x_star, g, method=None):
    return layer.backward_vjp(c, x_star, g, method=method)


def jacobian_dense(layer, c, x_star):
    return layer.jacobian_dense(c, x_star)


def unfold_jacobian(layer, c, x_star, k):
    return layer.unfold_jacobian(c, x_star, k)


def rate_study(layer, c, x0_mode='fixed_point', k=200, seed=0):
    return layer.rate_study(c, x0_mode=x0_mode, k=k, seed=seed)
