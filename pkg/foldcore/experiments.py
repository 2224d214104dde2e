"""Experiments behind the command-line driver.

Each ``run_*`` function returns ``(header, rows)`` ready to be written as
CSV.  Runs are deterministic in their ``seed``.
"""
import logging

import numpy as np

from foldcore import datasets
from foldcore import folding
from foldcore import learning
from foldcore import registry
from foldcore import tasks
from foldcore.options import DEFAULT_OPTIONS
from foldcore.steps import check_step


LOG = logging.getLogger(__name__)

PASS_THRESHOLD = 1e-4


def _rng(seed):
    return np.random.RandomState(seed)


def run_rate(layer='pgd-topk', start='fixed', iters=200, seed=0,
             options=None):
    """Unrolled forward and backward errors, one row per iteration."""
    if start not in ('fixed', 'random'):
        raise ValueError("start must be 'fixed' or 'random', received %r"
                         % start)
    made = registry.build(layer, options)
    c, report = made.draw(_rng(seed))
    mode = 'fixed_point' if start == 'fixed' else 'random'
    record = made.layer.rate_study(c, x0_mode=mode, k=iters, seed=seed,
                                   x_star=report.x_star)
    header = ['iter', 'forward_rel_err', 'backward_rel_err', 'rho_estimate']
    rows = [list(row) + [record.rho_estimate] for row in record.rows]
    return header, rows


def _deviation(actual, expected):
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    if not actual.size:
        return 0.0
    return float(np.max(np.abs(actual - expected) / (1.0 + np.abs(expected))))


def check_case(made, c, report, rng, h=1e-5):
    """Step-level and end-to-end gradient deviations at one point."""
    step_report = check_step(made.layer.step, report.x_star, c)
    g = rng.standard_normal(len(report.decision))
    grad = made.layer.backward_vjp(c, report.x_star, g).grad_c
    fd = folding.fd_vjp(made.layer, c, g, h=h)
    return step_report.max_deviation, _deviation(grad, fd)


def run_checkgrad(layer='all', trials=3, seed=0, options=None):
    """Compare analytic gradients against finite differences."""
    table = registry.layer_table(options)
    names = table.names() if layer == 'all' else [layer]
    rng = _rng(seed)
    header = ['layer', 'trial', 'step_deviation', 'end_to_end_deviation',
              'passed']
    rows = []
    for name in names:
        made = table.build(name, options)
        for trial in range(trials):
            c, report = made.draw(rng)
            step_dev, e2e_dev = check_case(made, c, report, rng)
            passed = int(max(step_dev, e2e_dev) < PASS_THRESHOLD)
            LOG.info('checkgrad %s trial %d: step %.3e, end-to-end %.3e',
                     name, trial, step_dev, e2e_dev)
            rows.append([name, trial, step_dev, e2e_dev, passed])
    return header, rows


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def run_denoise(lam=0.5, epochs=10, seed=0, n_signals=200, length=50,
                lr=1e-2, batch_size=32, options=None, on_checkpoint=None):
    """Learn the operator ``D`` of a total-variation denoiser.

    ``on_checkpoint(D)`` receives the learned operator after training.
    """
    options = DEFAULT_OPTIONS if options is None else options
    data = datasets.generate_denoise_data(seed, n_signals, length)
    problem = tasks.DenoiseProblem(length, lam)
    layer = problem.layer(options)
    D = data.extras['D'].copy()
    optimizer = learning.Adam([D], lr)
    train_x, train_y = data.train()
    test_x, test_y = data.test()

    def mean_mse(noisy, clean):
        total = 0.0
        for d, target in zip(noisy, clean):
            u = layer.forward(problem.pack(D, d)).decision
            total += learning.mse(u, target)[0]
        return total / len(noisy)

    header = ['epoch', 'train_mse', 'test_mse']
    rows = [[0, mean_mse(train_x, train_y), mean_mse(test_x, test_y)]]
    rng = _rng(seed)
    n_D = D.size
    for epoch in range(1, epochs + 1):
        total = 0.0
        for batch in _batches(len(train_x), batch_size, rng):
            grad = np.zeros_like(D)
            for i in batch:
                c = problem.pack(D, train_x[i])
                report = layer.forward(c)
                value, g = learning.mse(report.decision, train_y[i])
                total += value
                grad_c = layer.backward_vjp(c, report.x_star, g).grad_c
                grad += grad_c[:n_D].reshape(D.shape)
            optimizer.step([grad / len(batch)])
        rows.append([epoch, total / len(train_x), mean_mse(test_x, test_y)])
        LOG.info('denoise epoch %d: train %.6g, test %.6g', epoch,
                 rows[-1][1], rows[-1][2])
    if on_checkpoint is not None:
        on_checkpoint(D)
    return header, rows


class _RegretLoss(object):
    """Regret against the true parameters, with cached true optima."""
    def __init__(self, layer, problem):
        self.layer = layer
        self.problem = problem
        self._optima = {}

    def optimum(self, c_bar):
        key = c_bar.tobytes()
        if key not in self._optima:
            y = self.layer.forward(c_bar).decision
            self._optima[key] = self.problem.objective(y, c_bar)
        return self._optima[key]

    def __call__(self, c_hat, c_bar):
        return learning.regret(c_hat, c_bar, self.layer, self.problem,
                               optimum=self.optimum(c_bar))

    def value(self, c_hat, c_bar):
        y = self.layer.forward(c_hat).decision
        return self.problem.objective(y, c_bar) - self.optimum(c_bar)

    def mean(self, model, features, targets):
        predictions = model.forward(features)
        return float(np.mean([self.value(p, t)
                              for p, t in zip(predictions, targets)]))


def _network(in_dim, out_dim, width, seed):
    # Five affine layers.
    return learning.Mlp([in_dim] + [width] * 4 + [out_dim], seed=seed)


def run_portfolio(degree=1, epochs=5, seed=0, n_points=100, n_assets=8,
                  lr=1e-2, batch_size=32, width=32, options=None):
    """Train a price predictor through the portfolio layer on regret."""
    options = DEFAULT_OPTIONS if options is None else options
    data = datasets.generate_portfolio_data(seed, degree, n_points,
                                            n_assets)
    problem = tasks.PortfolioProblem(data.extras['V'],
                                     gamma=data.extras['gamma'],
                                     alpha=options.sqp_alpha,
                                     dual_update=options.sqp_dual_update,
                                     rho=options.rho)
    loss = _RegretLoss(problem.layer(options), problem)
    train_x, train_y = data.train()
    test_x, test_y = data.test()
    model = _network(train_x.shape[1], n_assets, width, seed)
    config = learning.TrainConfig(lr=lr, batch_size=batch_size,
                                  epochs=epochs, seed=seed)
    header = ['epoch', 'train_regret', 'test_regret']
    rows = [[0, loss.mean(model, train_x, train_y),
             loss.mean(model, test_x, test_y)]]

    def record(epoch, model):
        rows.append([epoch, loss.mean(model, train_x, train_y),
                     loss.mean(model, test_x, test_y)])

    learning.train_predictor(model, loss, train_x, train_y, config,
                             on_epoch=record)
    return header, rows


def run_bilinear(seeds=5, epochs=5, n_points=200, lr=1e-2, batch_size=32,
                 width=32, seed=0, clip_norm=1.0, options=None):
    """Integrated (regret) against two-stage (MSE) training.

    One instance per seed in ``seed .. seed + seeds - 1``; both models of
    an instance start from the same weights and train with the same
    settings, per-sample gradient clipping included.
    """
    options = DEFAULT_OPTIONS if options is None else options
    header = ['seed', 'epoch', 'integrated_test_regret',
              'two_stage_test_regret']
    rows = []
    for instance in range(seed, seed + seeds):
        data = datasets.generate_bilinear_data(instance, n_points)
        problem = tasks.BilinearProblem(datasets.bilinear_coupling(instance))
        loss = _RegretLoss(problem.layer(options), problem)
        train_x, train_y = data.train()
        test_x, test_y = data.test()
        out_dim = train_y.shape[1]
        config = learning.TrainConfig(lr=lr, batch_size=batch_size,
                                      epochs=epochs, seed=instance,
                                      clip_norm=clip_norm)
        curves = {}
        for name in ('integrated', 'two_stage'):
            model = _network(train_x.shape[1], out_dim, width, instance)
            curve = [loss.mean(model, test_x, test_y)]

            def record(epoch, m, curve=curve):
                curve.append(loss.mean(m, test_x, test_y))

            if name == 'integrated':
                learning.train_predictor(model, loss, train_x, train_y,
                                         config, on_epoch=record)
            else:
                learning.two_stage_baseline(model, train_x, train_y, config,
                                            on_epoch=record)
            curves[name] = curve
        for epoch in range(epochs + 1):
            rows.append([instance, epoch, curves['integrated'][epoch],
                         curves['two_stage'][epoch]])
        LOG.info('bilinear seed %d: integrated %.6g, two-stage %.6g',
                 instance, curves['integrated'][-1], curves['two_stage'][-1])
    return header, rows


def top_k_recovery(decisions, labels, k):
    """Fraction of samples whose k largest decisions are the labels."""
    hits = 0
    for y, label in zip(decisions, labels):
        hits += int(np.array_equal(datasets.top_k_indicator(y, k), label))
    return hits / float(len(labels))


def run_topk(epochs=10, seed=0, n_points=300, dim=10, n_classes=5, k=2,
             lr=1e-2, batch_size=32, options=None):
    """Learn a linear scorer through the smoothed top-k layer on BCE."""
    options = DEFAULT_OPTIONS if options is None else options
    data = datasets.generate_topk_data(seed, n_points, dim, n_classes, k)
    problem = tasks.TopKProblem(n_classes, k)
    layer = problem.layer(options)
    train_x, train_y = data.train()
    test_x, test_y = data.test()
    model = learning.Mlp([dim, n_classes], output_activation='identity',
                         seed=seed)

    def loss(c_hat, label):
        report = layer.forward(c_hat)
        value, g = learning.bce(report.decision, label)
        return value, layer.backward_vjp(c_hat, report.x_star, g).grad_c

    def evaluate(features, labels):
        decisions = [layer.forward(c).decision
                     for c in model.forward(features)]
        value = np.mean([learning.bce(y, label)[0]
                         for y, label in zip(decisions, labels)])
        return float(value), top_k_recovery(decisions, labels, k)

    header = ['epoch', 'train_loss', 'test_loss', 'test_accuracy']
    test_loss, accuracy = evaluate(test_x, test_y)
    rows = [[0, evaluate(train_x, train_y)[0], test_loss, accuracy]]

    def record(epoch, model):
        test_loss, accuracy = evaluate(test_x, test_y)
        rows.append([epoch, evaluate(train_x, train_y)[0], test_loss,
                     accuracy])

    config = learning.TrainConfig(lr=lr, batch_size=batch_size,
                                  epochs=epochs, seed=seed)
    learning.train_predictor(model, loss, train_x, train_y, config,
                             on_epoch=record)
    return header, rows


def all_passed(rows):
    """True when every checkgrad row passed."""
    return all(row[-1] for row in rows)

