import numpy as np

from tests import unittest

from foldcore import datasets
from foldcore import experiments
from foldcore.options import Options


class TestRate(unittest.TestCase):
    def test_rows_and_determinism(self):
        header, rows = experiments.run_rate('pgd-topk', iters=6, seed=2)
        self.assertEqual(len(header), 4)
        self.assertEqual([row[0] for row in rows], list(range(7)))
        self.assertEqual(rows, experiments.run_rate('pgd-topk', iters=6,
                                                    seed=2)[1])
        # At the fixed point only the Jacobian is off.
        self.assertTrue(all(row[1] < 1e-9 for row in rows))
        self.assertGreater(rows[0][2], rows[-1][2])

    def test_random_start_moves_the_state(self):
        _, rows = experiments.run_rate('pgd-topk', start='random', iters=4)
        self.assertGreater(rows[0][1], 0.0)

    def test_bad_start(self):
        with self.assertRaises(ValueError):
            experiments.run_rate(start='zero')


class TestCheckgrad(unittest.TestCase):
    def test_rows(self):
        header, rows = experiments.run_checkgrad('pgd-box', trials=2, seed=1)
        self.assertEqual(header, ['layer', 'trial', 'step_deviation',
                                  'end_to_end_deviation', 'passed'])
        self.assertEqual([row[:2] for row in rows],
                         [['pgd-box', 0], ['pgd-box', 1]])
        self.assertTrue(experiments.all_passed(rows))

    def test_all_passed(self):
        self.assertTrue(experiments.all_passed([['a', 0, 0.0, 0.0, 1]]))
        self.assertFalse(experiments.all_passed([['a', 0, 0.0, 0.0, 1],
                                                 ['b', 0, 0.0, 1.0, 0]]))


class TestDenoise(unittest.TestCase):
    def test_zero_penalty_has_nothing_to_learn(self):
        seen = []
        header, rows = experiments.run_denoise(
            lam=0.0, epochs=2, n_signals=10, length=6,
            on_checkpoint=seen.append)
        self.assertEqual(header, ['epoch', 'train_mse', 'test_mse'])
        self.assertEqual([row[0] for row in rows], [0, 1, 2])
        # The layer returns the noisy signal whatever D is.
        for row in rows:
            self.assertAlmostEqual(row[2], rows[0][2], places=10)
        np.testing.assert_allclose(seen[0], datasets.generate_denoise_data(
            0, 10, 6).extras['D'], atol=1e-8)


class TestTopkRecovery(unittest.TestCase):
    def test_fraction(self):
        labels = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
        decisions = np.array([[0.9, 0.8, 0.1], [0.9, 0.8, 0.1]])
        self.assertEqual(experiments.top_k_recovery(decisions, labels, 2),
                         0.5)


class TestSmallRuns(unittest.TestCase):
    def test_topk_run_shape(self):
        header, rows = experiments.run_topk(epochs=1, n_points=20, dim=4,
                                            options=Options(tol=1e-10))
        self.assertEqual(header[-1], 'test_accuracy')
        self.assertEqual(len(rows), 2)
        for row in rows:
            self.assertTrue(0.0 <= row[3] <= 1.0)
            self.assertGreater(row[1], 0.0)


class TestLearningDirections(unittest.TestCase):
    def test_portfolio_regret_falls(self):
        _, rows = experiments.run_portfolio(epochs=10)
        self.assertLess(rows[-1][2], 0.5 * rows[0][2])

    def test_learned_operator_beats_differencing(self):
        for lam in (0.2, 0.5):
            _, rows = experiments.run_denoise(
                lam=lam, epochs=3, n_signals=100, length=20, batch_size=8)
            self.assertLess(rows[-1][2], rows[0][2], 'lam=%s' % lam)

    def test_topk_recovers_the_labels(self):
        _, rows = experiments.run_topk(epochs=10, n_points=1000, lr=0.05)
        self.assertGreaterEqual(rows[-1][3], 0.95)

    def test_integrated_beats_two_stage(self):
        _, rows = experiments.run_bilinear(seeds=2, epochs=5)
        final = [row for row in rows if row[1] == 5]
        self.assertEqual([row[0] for row in final], [0, 1])
        integrated = np.mean([row[2] for row in final])
        two_stage = np.mean([row[3] for row in final])
        self.assertLess(integrated, two_stage)
