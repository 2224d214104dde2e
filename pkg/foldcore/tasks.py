"""Optimization problems used as layers, each with a matching folded layer.

Every problem exposes ``objective(x, c)`` (the value minimized by its
layer, for decision ``x`` and parameters ``c``), ``objective_grad(x, c)``
(its gradient in ``x``) and ``layer(options)``, which returns a
:class:`foldcore.folding.FoldedLayer`.  Forward passes use whatever solver
suits the problem best; backward passes fold the update step named in each
class.
"""
import logging

import numpy as np
import scipy.optimize

from foldcore import exceptions
from foldcore import linalg
from foldcore import prox
from foldcore import qp as qplib
from foldcore import solvers
from foldcore import sqp
from foldcore.folding import FoldedLayer
from foldcore.options import DEFAULT_OPTIONS
from foldcore.steps import SliceReadout


LOG = logging.getLogger(__name__)


def _closed_form_report(step, c, x):
    residual = step.fixed_point_residual(x, c)
    return solvers.SolveReport(x, 0, residual, True)


class BoxLayer(object):
    """``argmin 1/2 x'diag(q)x - c'x`` over ``lo <= x <= hi``; folds PGD."""
    def __init__(self, n, lo=0.0, hi=1.0, q=None, alpha=0.5):
        self.n = n
        self.q = np.ones(n) if q is None else linalg.as_vector(q, 'q', n)
        if np.any(self.q <= 0):
            raise ValueError('Box layer curvature must be positive')
        self.projector = prox.BoxProjector(np.broadcast_to(lo, (n,)),
                                           np.broadcast_to(hi, (n,)))
        self.alpha = alpha
        self.objective_fn = solvers.QuadraticObjective(self.q)
        self.step = solvers.PgdStep(self.objective_fn, self.projector,
                                    alpha, n, n)

    def solve(self, c, x0=None):
        c = linalg.as_vector(c, 'c', self.n)
        x = prox.project_box(c / self.q, self.projector.spec)
        return _closed_form_report(self.step, c, x)

    def objective(self, x, c):
        return self.objective_fn.value(x, c)

    def objective_grad(self, x, c):
        return self.objective_fn.grad(x, c)

    def layer(self, options=DEFAULT_OPTIONS, probe=None):
        return FoldedLayer.from_options(self.solve, self.step, options,
                                        probe=probe)


class TopKProblem(object):
    """Smoothed top-k selection.

    ``argmin -c'x + sum(x log x)`` over ``{0 <= x <= 1, sum(x) = k}``.  The
    minimizer is ``x_i = min(1, exp(c_i - 1 - tau))`` for the shift ``tau``
    that meets the budget; the forward pass finds ``tau`` with Brent's
    method and the backward pass folds entropic PGD.
    """
    def __init__(self, n, k, alpha=0.1):
        self.n = n
        self.k = k
        self.alpha = alpha
        self.objective_fn = solvers.EntropicTopKObjective()
        self.projector = prox.CappedSimplexProjector(k, n)
        self.step = solvers.PgdStep(self.objective_fn, self.projector,
                                    alpha, n, n)

    @staticmethod
    def _selection(c, tau):
        return np.exp(np.minimum(c - 1.0 - tau, 0.0))

    def solve(self, c, x0=None):
        c = linalg.as_vector(c, 'c', self.n)
        lo = np.min(c) - 1.0
        hi = np.max(c) - 1.0 - np.log(float(self.k) / self.n)
        budget = lambda tau: np.sum(self._selection(c, tau)) - self.k
        tau = scipy.optimize.brentq(budget, lo, hi, xtol=1e-15,
                                    maxiter=500)
        return _closed_form_report(self.step, c, self._selection(c, tau))

    def objective(self, x, c):
        return self.objective_fn.value(x, c)

    def objective_grad(self, x, c):
        return self.objective_fn.grad(x, c)

    def layer(self, options=DEFAULT_OPTIONS, probe=None):
        return FoldedLayer.from_options(self.solve, self.step, options,
                                        probe=probe)


class LassoProblem(object):
    """``argmin 1/2||x - c||^2 + lam ||x||_1``; folds proximal gradient."""
    def __init__(self, n, lam, alpha=0.5):
        self.n = n
        self.lam = lam
        self.alpha = alpha
        self.objective_fn = solvers.LeastSquaresObjective(n)
        self.step = solvers.ProxGradStep(self.objective_fn,
                                         prox.L1Prox(alpha * lam),
                                         alpha, n, n)

    def solve(self, c, x0=None):
        c = linalg.as_vector(c, 'c', self.n)
        return _closed_form_report(self.step, c,
                                   prox.soft_threshold(c, self.lam))

    def objective(self, x, c):
        return self.objective_fn.value(x, c) + self.lam * np.sum(np.abs(x))

    def objective_grad(self, x, c):
        return x - c + self.lam * np.sign(x)

    def layer(self, options=DEFAULT_OPTIONS, probe=None):
        return FoldedLayer.from_options(self.solve, self.step, options,
                                        probe=probe)


class QpProblem(object):
    """A standard-form QP whose ``params`` blocks are the layer input.

    The layer output is the primal solution; ADMM is both the forward
    solver and the folded step.
    """
    def __init__(self, base, rho=1.0, params=('p',)):
        self.base = base
        self.step = qplib.AdmmQpStep(base, rho=rho, params=params)

    @property
    def param_dim(self):
        return self.step.param_dim

    def pack(self, qp=None, **blocks):
        return self.step.pack(qp, **blocks)

    def solve(self, c, x0=None, tol=1e-8, max_iter=5000):
        return qplib.admm_qp_solve(self.step, c, x0=x0, tol=tol,
                                   max_iter=max_iter)

    def objective(self, x, c):
        return self.step.qp(c).objective(x)

    def objective_grad(self, x, c):
        Q, p, _, _ = self.step.unpack(c)
        return Q.dot(x) + p

    def layer(self, options=DEFAULT_OPTIONS, probe=None):
        solve = lambda c, x0=None: self.solve(c, x0=x0, tol=options.tol,
                                              max_iter=options.max_iter)
        return FoldedLayer.from_options(
            solve, self.step, options,
            readout=self.step.decision_readout(), probe=probe)


def differencing_matrix(n):
    """``(n - 1) x n`` with ``D[i, i] = 1`` and ``D[i, i + 1] = -1``."""
    D = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -1.0
    return D


class DenoiseProblem(object):
    """``argmin_u 1/2||u - d||^2 + lam ||D u||_1`` with learnable ``D``.

    Layer parameters are ``[vec(D); d]``.  The forward pass runs FDPG to
    convergence; the backward pass folds the FDPG step with frozen
    momentum and reads out the primal ``u = D'w + d``.
    """
    def __init__(self, n, lam, m=None, L=4.0, momentum='frozen',
                 frozen_t=100.0):
        self.n = n
        self.m = n - 1 if m is None else m
        self.lam = lam
        self.L = L
        self.momentum = momentum
        self.frozen_t = frozen_t
        self.step = solvers.FdpgStep(self.m, n, lam, L=L, momentum=momentum,
                                     frozen_t=frozen_t)

    @property
    def param_dim(self):
        return self.step.param_dim

    def pack(self, D, d):
        return self.step.pack(D, d)

    def unpack(self, c):
        return self.step.unpack(c)

    def solve(self, c, x0=None, tol=1e-8, max_iter=20000):
        D, d = self.unpack(linalg.as_vector(c, 'c', self.param_dim))
        # The step size follows D when a learned D outgrows the default.
        return solvers.fdpg_solve(D, d, self.lam,
                                  L=solvers.lipschitz_bound(D, self.L),
                                  tol=tol, max_iter=max_iter)

    def objective(self, u, c):
        D, d = self.unpack(c)
        return 0.5 * np.sum((u - d) ** 2) + self.lam * np.sum(
            np.abs(D.dot(u)))

    def objective_grad(self, u, c):
        D, d = self.unpack(c)
        return u - d + self.lam * D.T.dot(np.sign(D.dot(u)))

    def as_qp(self, c):
        """The same problem as a general QP over ``[u; t]``.

        ``min 1/2||u - d||^2 + lam 1't  s.t.  Du <= t, -Du <= t``
        """
        D, d = self.unpack(c)
        n, m = self.n, self.m
        Q = np.zeros((n + m, n + m))
        Q[:n, :n] = np.eye(n)
        p = np.concatenate([-d, self.lam * np.ones(m)])
        G = np.block([[D, -np.eye(m)], [-D, -np.eye(m)]])
        return qplib.QpGeneral(Q, p, G=G, h=np.zeros(2 * m))

    def layer(self, options=DEFAULT_OPTIONS, probe=None):
        solve = lambda c, x0=None: self.solve(
            c, tol=options.tol, max_iter=max(options.max_iter, 20000))
        step = solvers.FdpgStep(self.m, self.n, self.lam, L=self.L,
                                momentum=options.fdpg_momentum,
                                frozen_t=options.fdpg_frozen_t)
        return FoldedLayer.from_options(solve, step, options,
                                        readout=step.readout(), probe=probe)


def risk_budget(V):
    """``1.5 / n^2 * 1'V1``: half again the risk of the uniform portfolio."""
    n = V.shape[0]
    return 1.5 * np.sum(V) / float(n * n)


class PortfolioProblem(object):
    """``argmax c'x`` s.t. ``x'Vx <= gamma``, ``sum(x) = 1``, ``x >= 0``.

    Solved forward by SLSQP followed by SQP polish; folds the SQP step.
    """
    def __init__(self, V, gamma=None, alpha=0.5, dual_update='verbatim',
                 rho=1.0):
        self.V = linalg.as_matrix(V, 'V')
        self.n = self.V.shape[0]
        self.gamma = risk_budget(self.V) if gamma is None else float(gamma)
        n = self.n
        self.problem = sqp.SqpProblem(
            solvers.LinearObjective(), n, n,
            ineq=[sqp.QuadraticConstraint(n, P=2.0 * self.V,
                                          r=-self.gamma)],
            eq=[sqp.QuadraticConstraint(n, q=np.ones(n), r=-1.0)],
            nonneg=True)
        self.alpha = alpha
        self.dual_update = dual_update
        self.rho = rho

    def make_step(self, options=None):
        if options is None:
            return sqp.SqpStep(self.problem, alpha=self.alpha,
                               dual_update=self.dual_update, rho=self.rho)
        return sqp.SqpStep(self.problem, alpha=options.sqp_alpha,
                           dual_update=options.sqp_dual_update,
                           rho=options.rho)

    def solve(self, c, x0=None, step=None, tol=1e-8, max_iter=500):
        step = self.make_step() if step is None else step
        return sqp.slsqp_solve(step, c, tol=tol, max_iter=max_iter)

    def objective(self, x, c):
        return -np.dot(c, x)

    def objective_grad(self, x, c):
        return -np.asarray(c, dtype=np.float64)

    def risk(self, x):
        return x.dot(self.V).dot(x)

    def layer(self, options=DEFAULT_OPTIONS, probe=None):
        step = self.make_step(options)
        solve = lambda c, x0=None: self.solve(c, step=step, tol=options.tol)
        return FoldedLayer.from_options(solve, step, options,
                                        readout=SliceReadout(0, self.n),
                                        probe=probe)


class BilinearProblem(object):
    """Two capped-simplex linear programs coupled by ``x'Qy``.

    ``argmin -c'x - x'Qy - d'y + mu/2 (||x||^2 + ||y||^2)`` with
    ``sum(x) = p``, ``sum(y) = q`` and both boxed in ``[0, 1]``; the
    parameters are ``[c; d]``.  ``mu = 0`` gives the plain coupled linear
    programs.  Folds PGD on the joint variable.  The problem is
    nonconvex, so the forward pass runs PGD from several deterministic
    starts and keeps the best local optimum.
    """
    STARTS = 8
    #: Starts are descended to this tolerance; only the best one is then
    #  refined to the requested tolerance.
    SCREEN_TOL = 1e-6
    #: Local optima closer than this in the infinity norm are one optimum.
    DISTINCT = 1e-4

    def __init__(self, Q, p=1, q=2, mu=0.5, alpha=None):
        self.Q = linalg.as_matrix(Q, 'Q')
        self.nx, self.ny = self.Q.shape
        if mu < 0:
            raise ValueError('mu must be nonnegative, received %r' % mu)
        self.mu = mu
        self.objective_fn = solvers.BilinearObjective(self.Q, mu)
        self.px = prox.CappedSimplexProjector(p, self.nx)
        self.py = prox.CappedSimplexProjector(q, self.ny)
        self.projector = prox.ProductProjector([(self.nx, self.px),
                                                (self.ny, self.py)])
        if alpha is None:
            curvature = mu + np.linalg.norm(self.Q, 2)
            if curvature <= 0:
                raise ValueError('A bilinear problem with mu = 0 needs a '
                                 'nonzero Q to set its step size')
            alpha = 1.0 / curvature
        self.alpha = alpha
        dim = self.nx + self.ny
        self.step = solvers.PgdStep(self.objective_fn, self.projector,
                                    alpha, dim, dim)

    def starts(self):
        rng = np.random.RandomState(0)
        dim = self.nx + self.ny
        for _ in range(self.STARTS):
            yield self.projector.apply(rng.uniform(0.0, 1.0, dim))

    def _descend(self, c, z0, tol, max_iter):
        try:
            return solvers.solve(self.step, c, x0=z0, tol=tol,
                                 max_iter=max_iter).x_star
        except exceptions.NoConvergence as e:
            LOG.debug('Dropping a bilinear start: %s', e)
            return None

    def local_optima(self, c, tol=1e-8, max_iter=5000):
        """Distinct local optima PGD reaches from the starts, best first."""
        c = linalg.as_vector(c, 'c', self.nx + self.ny)
        found = []
        for z0 in self.starts():
            z = self._descend(c, z0, tol, max_iter)
            if z is None:
                continue
            if all(np.max(np.abs(z - other)) > self.DISTINCT
                   for _, other in found):
                found.append((self.objective_fn.value(z, c), z))
        found.sort(key=lambda item: item[0])
        return found

    def optimum_gap(self, c):
        """Objective gap between the best and second-best local optimum."""
        found = self.local_optima(c)
        if len(found) < 2:
            return np.inf
        return found[1][0] - found[0][0]

    def solve(self, c, x0=None, tol=1e-8, max_iter=5000):
        c = linalg.as_vector(c, 'c', self.nx + self.ny)
        found = self.local_optima(c, max(tol, self.SCREEN_TOL), max_iter)
        if not found:
            raise exceptions.NoConvergence('bilinear multi-start PGD', None,
                                           max_iter)
        return solvers.solve(self.step, c, x0=found[0][1], tol=tol,
                             max_iter=max_iter)

    def objective(self, z, c):
        return self.objective_fn.value(z, c)

    def objective_grad(self, z, c):
        return self.objective_fn.grad(z, c)

    def layer(self, options=DEFAULT_OPTIONS, probe=None):
        solve = lambda c, x0=None: self.solve(c, tol=options.tol,
                                              max_iter=options.max_iter)
        return FoldedLayer.from_options(solve, self.step, options,
                                        probe=probe)
