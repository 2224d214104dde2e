import os

import numpy as np
import pytest

from tests import unittest

from foldcore import exceptions
from foldcore import experiments
from foldcore import registry
from foldcore import solvers
from foldcore.folding import FoldedLayer
from foldcore.options import Options
from foldcore.steps import LinearStep


POINTS_PER_LAYER = 20


def scalar_solver(step, scale):
    def solve(c, x0=None):
        x = scale * np.asarray(c, dtype=np.float64)
        return solvers.SolveReport(x, 0, step.fixed_point_residual(x, c),
                                   True)
    return solve


class KinkedStep(LinearStep):
    def kink_margin(self, x, c):
        return 0.0


class DoubledParamStep(LinearStep):
    def vjp_param(self, x, c, v):
        return 2.0 * super(DoubledParamStep, self).vjp_param(x, c, v)


class CustomLayers(registry.Layers):
    @registry.case('x / 4 + c, fixed point 4c / 3')
    def _layer_quarter_step(self, options):
        step = LinearStep([[0.25]], [[1.0]])
        layer = FoldedLayer.from_options(scalar_solver(step, 4.0 / 3.0),
                                         step, options)
        return self._make(layer, lambda rng: rng.standard_normal(1))

    @registry.case('always sits on a kink')
    def _layer_kinked(self, options):
        step = KinkedStep([[0.5]], [[1.0]])
        layer = FoldedLayer.from_options(scalar_solver(step, 2.0), step,
                                         options)
        return self._make(layer, lambda rng: rng.standard_normal(1))

    def _layer_not_registered(self, options):
        pass


class TestLayerTable(unittest.TestCase):
    def test_shipped_names(self):
        self.assertEqual(registry.Layers().names(), [
            'admm-qp', 'fdpg', 'identity', 'pgd-bilinear', 'pgd-box',
            'pgd-topk', 'prox-lasso', 'scalar', 'sqp-portfolio'])

    def test_describe(self):
        self.assertIn('fixed point 2c', registry.Layers().describe('scalar'))

    def test_unknown_layer(self):
        with self.assertRaises(exceptions.UnknownLayerError):
            registry.build('no-such-layer')

    def test_build_tightens_tolerance(self):
        made = registry.build('pgd-box', Options(tol=1e-6, max_iter=10))
        self.assertEqual(made.name, 'pgd-box')
        self.assertEqual(made.layer.forward_tol, registry.CASE_TOL)
        self.assertEqual((made.state_dim, made.param_dim), (4, 4))

    def test_custom_layers_extend_the_table(self):
        table = CustomLayers()
        self.assertIn('quarter-step', table.names())
        self.assertIn('scalar', table.names())
        self.assertNotIn('not-registered', table.names())
        options = Options(custom_layers=table)
        self.assertIs(registry.layer_table(options), table)
        self.assertNotIn('quarter-step', registry.Layers().names())
        made = registry.build('quarter-step', options)
        report = made.layer.forward([3.0])
        np.testing.assert_allclose(report.x_star, [4.0])

    def test_draw_gives_up_on_kinks(self):
        made = CustomLayers().build('kinked')
        with self.assertRaises(exceptions.NoConvergence):
            made.draw(np.random.RandomState(0), attempts=3)


class TestShippedLayers(unittest.TestCase):
    def test_draws_are_regular(self):
        rng = np.random.RandomState(0)
        for name in ('pgd-box', 'prox-lasso', 'admm-qp'):
            made = registry.build(name)
            c, report = made.draw(rng)
            self.assertTrue(made.regular(c, report))
            self.assertLess(report.fixed_point_residual,
                            100 * registry.CASE_TOL)

    def test_scalar_case(self):
        made = registry.build('scalar')
        c, report = made.draw(np.random.RandomState(1))
        step_dev, e2e_dev = experiments.check_case(
            made, c, report, np.random.RandomState(2))
        self.assertLess(step_dev, 1e-8)
        self.assertLess(e2e_dev, 1e-8)

    def test_broken_vjp_is_caught(self):
        class Broken(registry.Layers):
            @registry.case('scalar step with a doubled parameter VJP')
            def _layer_broken(self, options):
                step = DoubledParamStep([[0.5]], [[1.0]])
                layer = FoldedLayer.from_options(scalar_solver(step, 2.0),
                                                 step, options)
                return self._make(layer, lambda rng: rng.standard_normal(1))

        _, rows = experiments.run_checkgrad(
            'broken', trials=2, options=Options(custom_layers=Broken()))
        self.assertFalse(experiments.all_passed(rows))
        for row in rows:
            self.assertAlmostEqual(row[2], 1.0, places=5)


def _layer_names():
    # FOLDCORE_LAYER narrows the check to one layer during development.
    single = os.environ.get('FOLDCORE_LAYER')
    if single is not None:
        return [single]
    return registry.Layers().names()


@pytest.mark.parametrize('name', _layer_names())
def test_layer_gradient_matches_finite_differences(name):
    made = registry.build(name)
    rng = np.random.RandomState(0)
    for point in range(POINTS_PER_LAYER):
        c, report = made.draw(rng)
        step_dev, e2e_dev = experiments.check_case(made, c, report, rng)
        assert step_dev < experiments.PASS_THRESHOLD, (
            'step VJPs of %s deviate by %.3e at point %d'
            % (name, step_dev, point))
        assert e2e_dev < experiments.PASS_THRESHOLD, (
            'gradient of %s deviates by %.3e at point %d'
            % (name, e2e_dev, point))
