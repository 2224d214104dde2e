import os
import shutil
import tempfile

import numpy as np

from tests import unittest

from foldcore import datasets
from foldcore import exceptions
from foldcore import tasks


class TestDataset(unittest.TestCase):
    def test_split(self):
        data = datasets.Dataset(np.zeros((20, 2)), np.arange(20.0)[:, None])
        train_x, train_y = data.train()
        test_x, test_y = data.test()
        self.assertEqual((len(train_x), len(test_x)), (18, 2))
        np.testing.assert_array_equal(test_y.ravel(), [18.0, 19.0])

    def test_length_mismatch(self):
        with self.assertRaises(exceptions.ShapeMismatch):
            datasets.Dataset(np.zeros((3, 2)), np.zeros((2, 1)))


class TestGenerators(unittest.TestCase):
    def test_seeded(self):
        first = datasets.generate_portfolio_data(4, n_points=10)
        second = datasets.generate_portfolio_data(4, n_points=10)
        np.testing.assert_array_equal(first.targets, second.targets)
        other = datasets.generate_portfolio_data(5, n_points=10)
        self.assertFalse(np.array_equal(first.targets, other.targets))

    def test_portfolio(self):
        data = datasets.generate_portfolio_data(0, degree=3, n_points=12,
                                                n_assets=6)
        self.assertEqual(data.features.shape, (12, 5))
        self.assertEqual(data.targets.shape, (12, 6))
        V = data.extras['V']
        np.testing.assert_allclose(V, V.T)
        self.assertGreater(np.min(np.linalg.eigvalsh(V)), 0.0)
        self.assertAlmostEqual(data.extras['gamma'],
                               1.5 * np.sum(V) / 36.0)
        self.assertEqual(data.extras['degree'], 3)
        with self.assertRaises(ValueError):
            datasets.generate_portfolio_data(0, degree=0)

    def test_bilinear(self):
        data = datasets.generate_bilinear_data(1, n_points=30)
        self.assertEqual(data.features.shape, (30, 10))
        self.assertEqual(data.targets.shape, (30, 8))
        self.assertTrue(np.all(np.abs(data.features) <= 2.0))
        self.assertTrue(np.all(np.isfinite(data.targets)))
        self.assertEqual(datasets.bilinear_coupling(1).shape, (4, 4))

    def test_denoise(self):
        data = datasets.generate_denoise_data(2, n_signals=6, length=20)
        self.assertEqual(data.features.shape, (6, 20))
        self.assertEqual(data.extras['D'].shape, (19, 20))
        for clean in data.targets:
            jumps = np.count_nonzero(np.diff(clean))
            self.assertGreaterEqual(jumps, 1)
            self.assertLessEqual(jumps, 5)

    def test_topk_labels_match_hidden_scorer(self):
        data = datasets.generate_topk_data(3, n_points=40, dim=6,
                                           n_classes=5, k=2)
        W = data.extras['W']
        for x, label in zip(data.features, data.targets):
            self.assertEqual(np.sum(label), 2.0)
            scores = W.dot(x)
            np.testing.assert_array_equal(
                datasets.top_k_indicator(scores, 2), label)
            ranked = np.sort(scores)[::-1]
            self.assertGreaterEqual(ranked[1] - ranked[2], 0.5)

    def test_top_k_indicator(self):
        np.testing.assert_array_equal(
            datasets.top_k_indicator(np.array([0.1, 3.0, -1.0, 2.0]), 2),
            [0.0, 1.0, 0.0, 1.0])


class TestCsvCache(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tempdir)

    def test_written_dataset_reads_back_exactly(self):
        data = datasets.generate_topk_data(0, n_points=8, dim=3)
        path = os.path.join(self.tempdir, 'topk.csv')
        datasets.write_dataset_csv(path, data)
        with open(path) as f:
            self.assertEqual(f.readline().strip(),
                             'f0,f1,f2,t0,t1,t2,t3,t4')
        loaded = datasets.read_dataset_csv(path)
        np.testing.assert_array_equal(loaded.features, data.features)
        np.testing.assert_array_equal(loaded.targets, data.targets)

    def test_extras_survive_the_round_trip(self):
        data = datasets.generate_portfolio_data(3, n_points=10, n_assets=4)
        path = os.path.join(self.tempdir, 'portfolio.csv')
        datasets.write_dataset_csv(path, data)
        self.assertTrue(os.path.exists(path + '.npz'))
        loaded = datasets.read_dataset_csv(path)
        np.testing.assert_array_equal(loaded.extras['V'], data.extras['V'])
        self.assertEqual(loaded.extras['gamma'], data.extras['gamma'])
        self.assertEqual(loaded.extras['degree'], 1)
        problem = tasks.PortfolioProblem(loaded.extras['V'],
                                         gamma=loaded.extras['gamma'])
        self.assertEqual(problem.gamma, data.extras['gamma'])

    def test_no_sidecar_without_extras(self):
        data = datasets.generate_bilinear_data(0, n_points=5)
        path = os.path.join(self.tempdir, 'bilinear.csv')
        datasets.write_dataset_csv(path, data)
        self.assertFalse(os.path.exists(path + '.npz'))
        self.assertEqual(datasets.read_dataset_csv(path).extras, {})
