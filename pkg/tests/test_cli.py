import io
import os
import shutil
import tempfile
from unittest import mock

import numpy as np
import scipy.optimize

from tests import unittest

from foldcore import cli
from foldcore import registry
from foldcore import solvers
from foldcore import tasks
from foldcore.folding import FoldedLayer
from foldcore.options import Options
from foldcore.steps import LinearStep


class WrongAnswerLayers(registry.Layers):
    @registry.case('a solver that returns c instead of 2c')
    def _layer_stuck(self, options):
        step = LinearStep([[0.5]], [[1.0]])

        def solve(c, x0=None):
            x = np.array(c, dtype=np.float64)
            return solvers.SolveReport(x, 0, step.fixed_point_residual(x, c),
                                       True)
        layer = FoldedLayer.from_options(solve, step, options)
        return self._make(layer, lambda rng: 1.0 + rng.uniform(0.0, 1.0, 1))


class RootlessLayers(registry.Layers):
    @registry.case('a root finder given a bracket without a sign change')
    def _layer_rootless(self, options):
        step = LinearStep([[0.5]], [[1.0]])

        def solve(c, x0=None):
            t = scipy.optimize.brentq(lambda t: t * t + 1.0, -1.0, 1.0)
            x = np.array([t])
            return solvers.SolveReport(x, 0, step.fixed_point_residual(x, c),
                                       True)
        layer = FoldedLayer.from_options(solve, step, options)
        return self._make(layer, lambda rng: rng.standard_normal(1))


class ScaledParamStep(LinearStep):
    def vjp_param(self, x, c, v):
        return 3.0 * self.B.T.dot(v)


class BrokenLayers(registry.Layers):
    @registry.case('scalar step with a wrong parameter VJP')
    def _layer_broken(self, options):
        step = ScaledParamStep([[0.5]], [[1.0]])

        def solve(c, x0=None):
            x = 2.0 * np.asarray(c, dtype=np.float64)
            return solvers.SolveReport(x, 0, step.fixed_point_residual(x, c),
                                       True)
        layer = FoldedLayer.from_options(solve, step, options)
        return self._make(layer, lambda rng: rng.standard_normal(1))


class TestFormatting(unittest.TestCase):
    def test_format_value(self):
        self.assertEqual(cli.format_value(0.1 + 0.2), '0.3')
        self.assertEqual(cli.format_value(1.0 / 3.0), '0.3333333333')
        self.assertEqual(cli.format_value(np.float64(2.5e-12)), '2.5e-12')
        self.assertEqual(cli.format_value(np.int64(7)), '7')
        self.assertEqual(cli.format_value(True), '1')
        self.assertEqual(cli.format_value('pgd-box'), 'pgd-box')

    def test_render_csv(self):
        self.assertEqual(cli.render_csv(['a', 'b'], [[1, 0.5], [2, 1e-20]]),
                         'a,b\n1,0.5\n2,1e-20\n')

    def test_run_id_ignores_flag_order(self):
        first = cli.run_id('rate', {'seed': 1, 'iters': 10})
        second = cli.run_id('rate', {'iters': 10, 'seed': 1})
        self.assertEqual(first, second)
        self.assertEqual(len(first), 40)
        self.assertNotEqual(first, cli.run_id('rate', {'seed': 2,
                                                       'iters': 10}))
        self.assertNotEqual(first, cli.run_id('checkgrad', {'seed': 1,
                                                            'iters': 10}))


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.mkdtemp()
        cwd = os.getcwd()
        os.chdir(self.tempdir)
        self.addCleanup(os.chdir, cwd)
        env = mock.patch.dict(os.environ)
        env.start()
        self.addCleanup(env.stop)
        os.environ.pop(cli.SEED_ENV, None)
        self.stdout = io.StringIO()
        self.stderr = io.StringIO()
        patcher = mock.patch('sys.stderr', self.stderr)
        patcher.start()
        self.addCleanup(patcher.stop)

    def tearDown(self):
        shutil.rmtree(self.tempdir)

    def path(self, name):
        return os.path.join(self.tempdir, name)

    def run_cli(self, *argv, **kwargs):
        return cli.main(list(argv), stdout=self.stdout, **kwargs)

    def read(self, name):
        with open(self.path(name)) as f:
            return f.read()


class TestCommands(CliTestCase):
    def test_rate_writes_csv_and_manifest(self):
        code = self.run_cli('rate', '--layer', 'pgd-topk', '--iters', '5',
                            '--out', self.path('rate.csv'))
        self.assertEqual(code, cli.EXIT_OK)
        lines = self.read('rate.csv').splitlines()
        self.assertEqual(lines[0],
                         'iter,forward_rel_err,backward_rel_err,rho_estimate')
        self.assertEqual(len(lines), 7)
        self.assertTrue(lines[1].startswith('0,0,'))
        manifest = cli.read_manifest(self.path('rate.csv.manifest'))
        self.assertEqual(manifest['command'], 'rate')
        self.assertEqual(manifest['seed'], '0')
        self.assertEqual(manifest['flag.iters'], '5')
        self.assertEqual(manifest['option.backward_method'], 'krylov')
        flags = {'layer': 'pgd-topk', 'start': 'fixed', 'iters': 5,
                 'seed': 0, 'backward_method': 'krylov', 'tol': 1e-8,
                 'rho': 1.0, 'sqp_dual_update': 'verbatim',
                 'fdpg_momentum': 'frozen'}
        self.assertEqual(manifest['run_id'], cli.run_id('rate', flags))

    def test_output_is_deterministic(self):
        for name in ('first.csv', 'second.csv'):
            self.run_cli('rate', '--layer', 'pgd-topk', '--start', 'random',
                         '--iters', '4', '--seed', '3',
                         '--out', self.path(name))
        self.assertEqual(self.read('first.csv'), self.read('second.csv'))
        first = cli.read_manifest(self.path('first.csv.manifest'))
        second = cli.read_manifest(self.path('second.csv.manifest'))
        self.assertEqual(first['run_id'], second['run_id'])

    def test_seed_from_environment(self):
        os.environ[cli.SEED_ENV] = '7'
        self.run_cli('rate', '--iters', '2', '--seed', '1',
                     '--out', self.path('rate.csv'))
        manifest = cli.read_manifest(self.path('rate.csv.manifest'))
        self.assertEqual(manifest['seed'], '7')
        self.assertEqual(manifest['flag.seed'], '7')

    def test_checkgrad_summary(self):
        code = self.run_cli('checkgrad', '--layer', 'scalar', '--trials', '2',
                            '--out', self.path('check.csv'))
        self.assertEqual(code, cli.EXIT_OK)
        name, worst, status = self.stdout.getvalue().split()
        self.assertEqual((name, status), ('scalar', 'PASS'))
        self.assertLess(float(worst), 1e-8)
        self.assertEqual(len(self.read('check.csv').splitlines()), 3)

    def test_checkgrad_without_output_file(self):
        self.assertEqual(self.run_cli('checkgrad', '--layer', 'identity',
                                      '--trials', '1'), cli.EXIT_OK)
        self.assertEqual(os.listdir(self.tempdir), ['checkgrad.manifest'])
        manifest = cli.read_manifest(self.path('checkgrad.manifest'))
        self.assertEqual(manifest['command'], 'checkgrad')
        self.assertEqual(manifest['flag.layer'], 'identity')

    def test_denoise_writes_operator(self):
        code = self.run_cli('denoise', '--lambda', '0', '--epochs', '1',
                            '--n-signals', '10', '--length', '6',
                            '--out', self.path('denoise.csv'))
        self.assertEqual(code, cli.EXIT_OK)
        rows = self.read('denoise.csv').splitlines()
        self.assertEqual(rows[0], 'epoch,train_mse,test_mse')
        self.assertEqual(len(rows), 3)
        D = self.read('denoise.csv.D.csv').splitlines()
        self.assertEqual(D[0], 'c0,c1,c2,c3,c4,c5')
        self.assertEqual(len(D), 6)
        learned = np.array([[float(v) for v in row.split(',')]
                            for row in D[1:]])
        np.testing.assert_allclose(learned, tasks.differencing_matrix(6),
                                   atol=1e-8)


class TestExitCodes(CliTestCase):
    def test_unknown_layer(self):
        code = self.run_cli('checkgrad', '--layer', 'no-such-layer')
        self.assertEqual(code, cli.EXIT_USAGE)
        self.assertIn('unknown-layer', self.stderr.getvalue())

    def test_argparse_errors(self):
        with self.assertRaises(SystemExit) as e:
            self.run_cli('rate', '--layer', 'scalar', '--out', 'x')
        self.assertEqual(e.exception.code, cli.EXIT_USAGE)
        with self.assertRaises(SystemExit) as e:
            self.run_cli('rate')
        self.assertEqual(e.exception.code, cli.EXIT_USAGE)

    def test_invalid_values(self):
        code = self.run_cli('--tol', '-1', 'checkgrad', '--layer', 'scalar')
        self.assertEqual(code, cli.EXIT_USAGE)
        self.assertIn('invalid-arguments', self.stderr.getvalue())
        os.environ[cli.SEED_ENV] = 'seven'
        self.assertEqual(self.run_cli('checkgrad', '--layer', 'scalar'),
                         cli.EXIT_USAGE)

    def test_gradient_check_failure(self):
        code = self.run_cli('checkgrad', '--layer', 'broken', '--trials', '1',
                            options=Options(custom_layers=BrokenLayers()))
        self.assertEqual(code, cli.EXIT_CHECK_FAILED)
        self.assertTrue(self.stdout.getvalue().startswith('broken '))
        self.assertTrue(self.stdout.getvalue().rstrip().endswith('FAIL'))

    def test_numerical_failure(self):
        code = self.run_cli('checkgrad', '--layer', 'stuck',
                            options=Options(custom_layers=WrongAnswerLayers()))
        self.assertEqual(code, cli.EXIT_NUMERICAL)
        self.assertIn('numerical-failure', self.stderr.getvalue())

    def test_solver_value_error_is_numerical(self):
        code = self.run_cli('checkgrad', '--layer', 'rootless',
                            options=Options(custom_layers=RootlessLayers()))
        self.assertEqual(code, cli.EXIT_NUMERICAL)
        self.assertIn('numerical-failure', self.stderr.getvalue())

    def test_nonpositive_sizes_are_usage_errors(self):
        for argv in (['topk', '--lr', '0', '--out', 'x'],
                     ['bilinear', '--seeds', '0', '--out', 'x'],
                     ['checkgrad', '--trials', '-2']):
            with self.assertRaises(SystemExit) as e:
                self.run_cli(*argv)
            self.assertEqual(e.exception.code, cli.EXIT_USAGE)


class TestBilinearSeed(CliTestCase):
    def test_seed_offsets_the_instances(self):
        calls = []

        def fake_run(*args, **kwargs):
            calls.append(kwargs['seed'])
            return ['seed', 'epoch', 'integrated_test_regret',
                    'two_stage_test_regret'], [[kwargs['seed'], 0, 1.0, 1.0]]

        os.environ[cli.SEED_ENV] = '11'
        with mock.patch('foldcore.experiments.run_bilinear', fake_run):
            code = self.run_cli('bilinear', '--seeds', '1',
                                '--out', self.path('bilinear.csv'))
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(calls, [11])
        self.assertEqual(self.read('bilinear.csv').splitlines()[1],
                         '11,0,1,1')
