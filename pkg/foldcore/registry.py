"""Named folded layers for diagnostics and experiments.

Any method of :class:`Layers` whose name starts with ``_layer_`` and that
carries a ``@case`` decorator is registered under its suffix, with
underscores turned into dashes (``_layer_pgd_topk`` -> ``pgd-topk``).
Subclass :class:`Layers` to add cases and pass an instance through
``Options(custom_layers=...)``.
"""
import inspect
import logging

import numpy as np

from foldcore import datasets
from foldcore import exceptions
from foldcore import qp as qplib
from foldcore import solvers
from foldcore import tasks
from foldcore.folding import FoldedLayer
from foldcore.options import DEFAULT_OPTIONS
from foldcore.steps import LinearStep


LOG = logging.getLogger(__name__)

# Forward solves for gradient checks are run much tighter than the
# finite-difference step.
CASE_TOL = 1e-11
CASE_MAX_ITER = 20000
KINK_MARGIN = 1e-3


def case(description):
    def _record_case(func):
        func.description = description
        return func
    return _record_case


def _get_methods(cls):
    for name, method in inspect.getmembers(cls, predicate=inspect.isfunction):
        yield name, method


class LayerCase(object):
    """A folded layer with a parameter sampler.

    ``sample(rng)`` draws a parameter vector; ``regular(c, report)`` says
    whether the solution at ``c`` is far enough from any kink of the step
    for finite differences to be meaningful.
    """
    def __init__(self, name, description, layer, sample, problem=None,
                 regular=None):
        self.name = name
        self.description = description
        self.layer = layer
        self.sample = sample
        self.problem = problem
        self._regular = regular

    @property
    def state_dim(self):
        return self.layer.state_dim

    @property
    def param_dim(self):
        return self.layer.param_dim

    def regular(self, c, report):
        margin = self.layer.step.kink_margin(report.x_star, c)
        if margin <= KINK_MARGIN:
            return False
        if self._regular is not None:
            return self._regular(c, report)
        return True

    def draw(self, rng, attempts=100):
        """A parameter and its forward report away from any kink."""
        for _ in range(attempts):
            c = self.sample(rng)
            report = self.layer.forward(c)
            if self.regular(c, report):
                return c, report
        raise exceptions.NoConvergence(
            'sampling a regular point for %s' % self.name, None, attempts)


class LayerRegistry(type):
    def __init__(cls, name, bases, attrs):
        cls._populate_layer_table()
        super(LayerRegistry, cls).__init__(name, bases, attrs)

    def _populate_layer_table(cls):
        layer_table = {}
        for name, method in _get_methods(cls):
            if not name.startswith('_layer_'):
                continue
            description = getattr(method, 'description', None)
            if description is not None:
                layer_table[name[7:].replace('_', '-')] = {
                    'factory': method,
                    'description': description,
                }
        cls.LAYER_TABLE = layer_table


def _closed_form(step, fn):
    def solve(c, x0=None):
        x = fn(c)
        return solvers.SolveReport(x, 0, step.fixed_point_residual(x, c),
                                   True)
    return solve


class Layers(metaclass=LayerRegistry):

    LAYER_TABLE = {
    }

    def names(self):
        return sorted(self.LAYER_TABLE)

    def describe(self, name):
        return self._lookup(name)['description']

    def _lookup(self, name):
        try:
            return self.LAYER_TABLE[name]
        except KeyError:
            raise exceptions.UnknownLayerError('Unknown layer: %s' % name)

    def build(self, name, options=None):
        entry = self._lookup(name)
        options = DEFAULT_OPTIONS if options is None else options
        options = options.replace(tol=min(options.tol, CASE_TOL),
                                  max_iter=max(options.max_iter,
                                               CASE_MAX_ITER))
        made = entry['factory'](self, options)
        made.name = name
        made.description = entry['description']
        return made

    def _make(self, layer, sample, problem=None, regular=None):
        return LayerCase(None, None, layer, sample, problem=problem,
                         regular=regular)

    @case('U(x, c) = c: the fold of a solver that ignores its state')
    def _layer_identity(self, options):
        step = LinearStep(np.zeros((3, 3)), np.eye(3))
        layer = FoldedLayer.from_options(
            _closed_form(step, lambda c: np.array(c)), step, options)
        return self._make(layer, lambda rng: rng.standard_normal(3))

    @case('U(x, c) = x / 2 + c, fixed point 2c')
    def _layer_scalar(self, options):
        step = LinearStep([[0.5]], [[1.0]])
        layer = FoldedLayer.from_options(
            _closed_form(step, lambda c: 2.0 * np.asarray(c)), step,
            options)
        return self._make(layer, lambda rng: rng.standard_normal(1))

    @case('PGD on a diagonal quadratic over the unit box')
    def _layer_pgd_box(self, options):
        problem = tasks.BoxLayer(4, q=[1.0, 2.0, 0.5, 1.5])
        return self._make(problem.layer(options),
                          lambda rng: rng.uniform(-0.5, 2.5, 4),
                          problem=problem)

    @case('Entropic PGD over the capped simplex (smoothed top-2 of 5)')
    def _layer_pgd_topk(self, options):
        problem = tasks.TopKProblem(5, 2, alpha=0.1)
        return self._make(problem.layer(options),
                          lambda rng: 0.5 * rng.standard_normal(5),
                          problem=problem)

    @case('Proximal gradient with soft thresholding (lasso denoiser)')
    def _layer_prox_lasso(self, options):
        problem = tasks.LassoProblem(5, 0.3, alpha=0.5)
        return self._make(problem.layer(options),
                          lambda rng: rng.standard_normal(5),
                          problem=problem)

    @case('ADMM on a 4-variable simplex-constrained QP, parameters [p; b]')
    def _layer_admm_qp(self, options):
        rng = np.random.RandomState(7)
        M = rng.standard_normal((4, 4))
        base = qplib.QpStandard(M.dot(M.T) / 4.0 + 0.5 * np.eye(4),
                                np.zeros(4), np.ones((1, 4)), [1.0])
        problem = tasks.QpProblem(base, rho=options.rho, params=('p', 'b'))

        def sample(rng):
            return np.concatenate([rng.standard_normal(4),
                                   rng.uniform(0.5, 1.5, 1)])
        return self._make(problem.layer(options), sample, problem=problem)

    @case('FDPG total-variation denoiser with learnable D, length 4')
    def _layer_fdpg(self, options):
        problem = tasks.DenoiseProblem(4, 0.3)
        D0 = tasks.differencing_matrix(4)

        def sample(rng):
            D = D0 + 0.1 * rng.standard_normal(D0.shape)
            return problem.pack(D, 1.5 * rng.standard_normal(4))
        return self._make(problem.layer(options), sample, problem=problem)

    @case('SQP on a 4-asset risk-constrained portfolio')
    def _layer_sqp_portfolio(self, options):
        rng = np.random.RandomState(11)
        F = rng.uniform(-1.0, 1.0, (4, 4))
        problem = tasks.PortfolioProblem(F.T.dot(F) / 4.0 + 0.01 * np.eye(4))
        return self._make(problem.layer(options),
                          lambda rng: 1.0 + 0.3 * rng.standard_normal(4),
                          problem=problem)

    @case('PGD on a bilinear program over two capped simplices')
    def _layer_pgd_bilinear(self, options):
        problem = tasks.BilinearProblem(datasets.bilinear_coupling(0))

        def unique_optimum(c, report):
            return problem.optimum_gap(c) > KINK_MARGIN
        return self._make(problem.layer(options),
                          lambda rng: rng.standard_normal(8),
                          problem=problem, regular=unique_optimum)


def layer_table(options=None):
    """The layer registry selected by ``options``."""
    if options is not None and options.custom_layers is not None:
        return options.custom_layers
    return Layers()


def build(name, options=None):
    return layer_table(options).build(name, options)
