import numpy as np

from tests import assert_grad_close
from tests import end_to_end_fd
from tests import unittest

from foldcore import exceptions
from foldcore import solvers
from foldcore import sqp
from foldcore import tasks
from foldcore.options import Options


def disc_problem():
    # max c'x over the nonnegative part of the unit disc.
    return sqp.SqpProblem(
        solvers.LinearObjective(), 2, 2,
        ineq=[sqp.QuadraticConstraint(2, P=2.0 * np.eye(2), r=-1.0)],
        nonneg=True)


class TestConstraints(unittest.TestCase):
    def test_value_and_gradient(self):
        con = sqp.QuadraticConstraint(2, P=[[2.0, 0.0], [0.0, 4.0]],
                                      q=[1.0, -1.0], r=0.5)
        x = np.array([1.0, 2.0])
        self.assertAlmostEqual(con.value(x), 0.5 * (2 + 16) - 1 + 0.5)
        np.testing.assert_allclose(con.grad(x), [3.0, 7.0])

    def test_curvature_must_be_symmetric(self):
        with self.assertRaises(ValueError):
            sqp.QuadraticConstraint(2, P=[[0.0, 1.0], [0.0, 0.0]])

    def test_multipliers_at_disc_optimum(self):
        problem = disc_problem()
        mu = problem.multipliers(np.array([1.0, 0.0]),
                                 np.array([1.0, -0.5]))
        np.testing.assert_allclose(mu, [0.5], atol=1e-12)


class TestSqpStep(unittest.TestCase):
    def test_invalid_configuration(self):
        with self.assertRaises(ValueError):
            sqp.SqpStep(disc_problem(), alpha=0.0)
        with self.assertRaises(ValueError):
            sqp.SqpStep(disc_problem(), dual_update='nesterov')

    def test_dual_fixed_point(self):
        step = sqp.SqpStep(disc_problem(), alpha=0.5)
        np.testing.assert_allclose(step.dual_fixed_point(np.array([0.6])),
                                   [0.2])
        damped = sqp.SqpStep(disc_problem(), dual_update='damped')
        np.testing.assert_allclose(damped.dual_fixed_point(np.array([0.6])),
                                   [0.6])

    def test_optimum_is_a_fixed_point(self):
        c = np.array([1.0, -0.5])
        for dual_update in ('verbatim', 'damped'):
            step = sqp.SqpStep(disc_problem(), dual_update=dual_update)
            lam = step.dual_fixed_point(np.array([0.5]))
            x, lam_next = sqp.sqp_step(step.problem, [1.0, 0.0], lam, c,
                                       dual_update=dual_update)
            np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-9)
            np.testing.assert_allclose(lam_next, lam, atol=1e-9)

    def test_subproblem_infeasible(self):
        problem = sqp.SqpProblem(
            solvers.LinearObjective(), 2, 2,
            eq=[sqp.QuadraticConstraint(2, q=[1.0, 1.0], r=1.0)],
            nonneg=True)
        step = sqp.SqpStep(problem, inner_max_iter=200)
        with self.assertRaises(exceptions.SubproblemInfeasible) as e:
            step.forward(np.array([0.5, 0.5, 0.0]), np.array([1.0, 0.0]))
        self.assertGreater(e.exception.residual, 0.5)


class TestSqpSolve(unittest.TestCase):
    def test_disc(self):
        step = sqp.SqpStep(disc_problem())
        report = sqp.slsqp_solve(step, [1.0, -0.5], tol=1e-10)
        np.testing.assert_allclose(report.decision, [1.0, 0.0], atol=1e-8)
        np.testing.assert_allclose(report.dual, [0.5 / 3.0], atol=1e-8)

    def test_sqp_iteration_from_nearby_point(self):
        step = sqp.SqpStep(disc_problem(), dual_update='damped')
        report = sqp.sqp_solve(step, [1.0, -0.5], [0.9, 0.1], [0.4],
                               tol=1e-10)
        np.testing.assert_allclose(report.decision, [1.0, 0.0], atol=1e-8)
        np.testing.assert_allclose(report.dual, [0.5], atol=1e-8)

    def test_portfolio_optimum(self):
        problem = tasks.PortfolioProblem(np.eye(3), gamma=0.5)
        report = problem.solve(np.array([1.0, 0.0, 0.0]), tol=1e-10)
        np.testing.assert_allclose(report.decision,
                                   [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                                   atol=1e-7)
        self.assertAlmostEqual(problem.risk(report.decision), 0.5, places=7)

    def test_default_risk_budget(self):
        V = np.diag([1.0, 2.0])
        self.assertAlmostEqual(tasks.risk_budget(V), 1.5 * 3.0 / 4.0)
        self.assertAlmostEqual(tasks.PortfolioProblem(V).gamma, 1.125)


class TestSqpLayer(unittest.TestCase):
    def test_portfolio_gradient(self):
        problem = tasks.PortfolioProblem(np.eye(3), gamma=0.5)
        layer = problem.layer(Options(tol=1e-11))
        c = np.array([1.0, 0.0, 0.0])
        report = layer.forward(c)
        g = np.array([1.0, -2.0, 0.5])
        grad = layer.backward_vjp(c, report.x_star, g).grad_c
        assert_grad_close(grad, end_to_end_fd(layer, c, g))

    def test_damped_dual_gives_same_gradient(self):
        problem = tasks.PortfolioProblem(np.eye(3), gamma=0.5)
        c = np.array([1.0, 0.2, -0.1])
        g = np.array([0.3, 1.0, -1.0])
        grads = []
        for dual_update in ('verbatim', 'damped'):
            layer = problem.layer(Options(tol=1e-11,
                                          sqp_dual_update=dual_update))
            report = layer.forward(c)
            grads.append(layer.backward_vjp(c, report.x_star, g).grad_c)
        np.testing.assert_allclose(grads[0], grads[1], atol=1e-6)
