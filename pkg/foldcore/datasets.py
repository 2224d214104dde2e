"""Synthetic datasets for the end-to-end experiments, and a CSV cache.

Each generator is deterministic in its ``seed`` and returns a
:class:`Dataset` split 90/10 into training and test samples.
"""
import csv
import logging
import os

import numpy as np

from foldcore import exceptions
from foldcore.tasks import differencing_matrix
from foldcore.tasks import risk_budget


LOG = logging.getLogger(__name__)

TRAIN_FRACTION = 0.9


class Dataset(object):
    """Paired ``features`` and ``targets`` plus problem-specific extras."""
    def __init__(self, features, targets, **extras):
        if len(features) != len(targets):
            raise exceptions.ShapeMismatch('targets', (len(features), '*'),
                                           np.shape(targets))
        self.features = np.asarray(features, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.extras = extras

    def __len__(self):
        return len(self.features)

    @property
    def n_train(self):
        return int(round(TRAIN_FRACTION * len(self)))

    def train(self):
        return self.features[:self.n_train], self.targets[:self.n_train]

    def test(self):
        return self.features[self.n_train:], self.targets[self.n_train:]


def _bilinear_nonlinearity(t):
    return (t * np.cos(2.0 * t) + 2.5 * np.log(t / (t + 2.0)) +
            t ** 2 * np.sin(4.0 * t))


def generate_bilinear_data(seed, n_points=200, dim=10, out_dim=8,
                           hidden=16):
    """Features uniform in ``[-2, 2]^dim``; costs through a tanh network.

    The network output lies in ``(-1, 1)``; it is shifted into ``(0, 2]``
    (floored at ``1e-3``) before the scalar nonlinearity so that its
    logarithm is defined.
    """
    rng = np.random.RandomState(seed)
    X = rng.uniform(-2.0, 2.0, (n_points, dim))
    W1 = rng.standard_normal((hidden, dim)) / np.sqrt(dim)
    W2 = rng.standard_normal((out_dim, hidden)) / np.sqrt(hidden)
    h = np.tanh(np.tanh(X.dot(W1.T)).dot(W2.T))
    t = np.clip(h + 1.0, 1e-3, 2.0)
    return Dataset(X, _bilinear_nonlinearity(t))


def bilinear_coupling(seed, nx=4, ny=4, scale=0.5):
    """A fixed coupling matrix ``Q`` for one bilinear instance."""
    rng = np.random.RandomState(10000 + seed)
    return scale * rng.standard_normal((nx, ny))


def generate_portfolio_data(seed, degree=1, n_points=200, n_assets=8,
                            n_features=5, n_factors=4, noise=0.0):
    """Prices from features through ``(0.05/sqrt(p) Bx + 0.1^(1/deg))^deg``.

    ``B`` is a random 0/1 matrix and ``x`` standard normal.  The
    covariance is ``F'F / n_factors + 0.01 I`` for a uniform factor matrix
    ``F``; ``noise`` adds factor and idiosyncratic noise to the prices.
    """
    if degree < 1:
        raise ValueError('degree must be at least 1, received %r' % degree)
    rng = np.random.RandomState(seed)
    B = rng.binomial(1, 0.5, (n_assets, n_features)).astype(np.float64)
    X = rng.standard_normal((n_points, n_features))
    base = 0.05 / np.sqrt(n_features) * X.dot(B.T) + 0.1 ** (1.0 / degree)
    prices = np.sign(base) * np.abs(base) ** degree
    F = rng.uniform(-1.0, 1.0, (n_factors, n_assets))
    if noise:
        factors = rng.standard_normal((n_points, n_factors))
        prices = prices + noise * (
            factors.dot(F) * 0.01 +
            0.01 * rng.standard_normal((n_points, n_assets)))
    V = F.T.dot(F) / n_factors + 0.01 * np.eye(n_assets)
    return Dataset(X, prices, V=V, gamma=risk_budget(V), degree=degree)


def piecewise_constant_signal(rng, length, max_jumps=5):
    jumps = rng.randint(1, max_jumps + 1)
    cuts = np.sort(rng.choice(np.arange(1, length), size=jumps,
                              replace=False))
    levels = rng.standard_normal(jumps + 1) * 2.0
    signal = np.empty(length)
    for level, (start, stop) in zip(levels, zip(np.r_[0, cuts],
                                                np.r_[cuts, length])):
        signal[start:stop] = level
    return signal


def generate_denoise_data(seed, n_signals=200, length=50):
    """Clean piecewise-constant signals (targets) and noisy copies.

    The noise is independent standard normal.  ``extras['D']`` is the
    differencing operator used to initialize a learned denoiser.
    """
    rng = np.random.RandomState(seed)
    clean = np.array([piecewise_constant_signal(rng, length)
                      for _ in range(n_signals)])
    noisy = clean + rng.standard_normal(clean.shape)
    return Dataset(noisy, clean, D=differencing_matrix(length))


def top_k_indicator(scores, k):
    out = np.zeros(scores.shape)
    order = np.argsort(-scores, kind='mergesort')[:k]
    out[order] = 1.0
    return out


def generate_topk_data(seed, n_points=300, dim=10, n_classes=5, k=2,
                       margin=0.5):
    """Embeddings labelled by the top-k classes of a hidden linear scorer.

    Samples whose k-th and (k+1)-th scores are closer than ``margin`` are
    redrawn, so the labels are linearly separable with a margin.
    """
    rng = np.random.RandomState(seed)
    W = rng.standard_normal((n_classes, dim))
    features, labels = [], []
    while len(features) < n_points:
        x = rng.standard_normal(dim)
        scores = W.dot(x)
        ranked = np.sort(scores)[::-1]
        if ranked[k - 1] - ranked[k] < margin:
            continue
        features.append(x)
        labels.append(top_k_indicator(scores, k))
    return Dataset(np.array(features), np.array(labels), W=W, k=k)


def extras_path(path):
    return path + '.npz'


def write_dataset_csv(path, dataset):
    """One row per sample: ``f0..f{p-1}`` features then ``t0..`` targets.

    Extras (covariances, operators, budgets) go to an ``.npz`` file beside
    the CSV.
    """
    n_feat = dataset.features.shape[1]
    n_targ = dataset.targets.shape[1]
    header = (['f%d' % i for i in range(n_feat)] +
              ['t%d' % i for i in range(n_targ)])
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for x, y in zip(dataset.features, dataset.targets):
            writer.writerow(['%r' % float(v) for v in np.r_[x, y]])
    if dataset.extras:
        np.savez(extras_path(path), **dataset.extras)
    LOG.debug('Wrote %d samples to %s', len(dataset), path)


def read_dataset_csv(path):
    with open(path, newline='') as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    n_feat = sum(1 for name in header if name.startswith('f'))
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    extras = {}
    if os.path.exists(extras_path(path)):
        with np.load(extras_path(path)) as stored:
            for key in stored.files:
                value = stored[key]
                extras[key] = value.item() if value.ndim == 0 else value
    return Dataset(data[:, :n_feat], data[:, n_feat:], **extras)
