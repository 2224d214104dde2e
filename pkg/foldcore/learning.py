"""A small dense network, optimizers, losses and the training loop.

Everything works on numpy arrays with hand-derived backward passes.  A
batch of samples is a 2-D array with one sample per row.  Losses act on a
single sample and return ``(value, gradient)``; the training loop averages
them over each mini-batch.
"""
import logging

import numpy as np

from foldcore import exceptions
from foldcore import linalg


LOG = logging.getLogger(__name__)


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(np.float64)


def _tanh_grad(z, a):
    return 1.0 - a * a


def _identity_grad(z, a):
    return np.ones_like(z)


ACTIVATIONS = {
    'relu': (_relu, _relu_grad),
    'tanh': (np.tanh, _tanh_grad),
    'identity': (lambda z: z, _identity_grad),
}


class Mlp(object):
    """Affine layers, each followed by an activation.

    ``sizes`` lists the widths from input to output; every hidden layer
    uses ``activation`` and the last one ``output_activation``.  Weights
    are drawn from a seeded normal with He scaling for relu and Glorot
    scaling otherwise.
    """
    def __init__(self, sizes, activation='relu', output_activation='identity',
                 seed=0):
        if len(sizes) < 2:
            raise ValueError('An Mlp needs at least an input and an output '
                             'size, received %r' % (sizes,))
        rng = np.random.RandomState(seed)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            act = output_activation if last else activation
            if act == 'relu':
                scale = np.sqrt(2.0 / fan_in)
            else:
                scale = np.sqrt(2.0 / (fan_in + fan_out))
            layers.append((rng.standard_normal((fan_out, fan_in)) * scale,
                           np.zeros(fan_out), act))
        self._set_layers(layers)

    @classmethod
    def from_layers(cls, layers):
        """Build from explicit ``(weight, bias, activation)`` triples."""
        model = cls.__new__(cls)
        model._set_layers([(linalg.as_matrix(W, 'weight'),
                            linalg.as_vector(b, 'bias'), act)
                           for W, b, act in layers])
        return model

    def _set_layers(self, layers):
        previous = None
        for W, b, act in layers:
            if act not in ACTIVATIONS:
                raise ValueError('Unknown activation: %r' % (act,))
            if b.shape != (W.shape[0],):
                raise exceptions.ShapeMismatch('bias', (W.shape[0],),
                                               b.shape)
            if previous is not None and W.shape[1] != previous:
                raise exceptions.ShapeMismatch('weight', ('*', previous),
                                               W.shape)
            previous = W.shape[0]
        self.weights = [W for W, _, _ in layers]
        self.biases = [b for _, b, _ in layers]
        self.activations = [act for _, _, act in layers]
        self.zero_grad()

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def parameters(self):
        params = []
        for W, b in zip(self.weights, self.biases):
            params.extend([W, b])
        return params

    def zero_grad(self):
        self.grads = [np.zeros_like(p) for p in self.parameters()]

    def _check_input(self, features):
        X = np.array(features, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.in_dim:
            raise exceptions.ShapeMismatch('features', ('*', self.in_dim),
                                           X.shape)
        return linalg.check_finite(X, 'features'), single

    def _trace(self, X):
        pre, post = [], [X]
        a = X
        for W, b, act in zip(self.weights, self.biases, self.activations):
            z = a.dot(W.T) + b
            a = ACTIVATIONS[act][0](z)
            pre.append(z)
            post.append(a)
        return pre, post

    def forward(self, features):
        X, single = self._check_input(features)
        out = self._trace(X)[1][-1]
        return out[0] if single else out

    def backward(self, features, grad_output):
        """Add the parameter gradients of ``<grad_output, forward(x)>``."""
        X, _ = self._check_input(features)
        G = np.atleast_2d(np.array(grad_output, dtype=np.float64))
        if G.shape != (X.shape[0], self.out_dim):
            raise exceptions.ShapeMismatch('grad_output',
                                           (X.shape[0], self.out_dim),
                                           G.shape)
        pre, post = self._trace(X)
        for i in reversed(range(len(self.weights))):
            act = self.activations[i]
            G = G * ACTIVATIONS[act][1](pre[i], post[i + 1])
            self.grads[2 * i] += G.T.dot(post[i])
            self.grads[2 * i + 1] += G.sum(axis=0)
            G = G.dot(self.weights[i])
        return self.grads

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat):
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size


def mlp_forward(model, features):
    return model.forward(features)


def mlp_backward(model, features, grad_output):
    return model.backward(features, grad_output)


class Sgd(object):
    def __init__(self, params, lr):
        if lr <= 0:
            raise ValueError('lr must be positive, received %r' % lr)
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam(object):
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError('lr must be positive, received %r' % lr)
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (
                np.sqrt(v / correction2) + self.eps)


class TrainConfig(object):
    def __init__(self, lr=1e-2, batch_size=32, epochs=5, optimizer='adam',
                 seed=0, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        if lr <= 0:
            raise ValueError('lr must be positive, received %r' % lr)
        if batch_size < 1:
            raise ValueError('batch_size must be at least 1, received %r'
                             % batch_size)
        if optimizer not in ('sgd', 'adam'):
            raise ValueError("optimizer must be 'sgd' or 'adam', received %r"
                             % optimizer)
        if clip_norm is not None and clip_norm <= 0:
            raise ValueError('clip_norm must be positive, received %r'
                             % clip_norm)
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.optimizer = optimizer
        self.seed = seed
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        #: Per-sample loss gradients longer than this are scaled down to it.
        self.clip_norm = clip_norm

    def make_optimizer(self, params):
        if self.optimizer == 'sgd':
            return Sgd(params, self.lr)
        return Adam(params, self.lr, self.beta1, self.beta2, self.eps)

    def as_dict(self):
        return dict(vars(self))


def mse(prediction, target):
    prediction = np.asarray(prediction, dtype=np.float64)
    diff = prediction - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def bce(probability, label, eps=1e-12):
    """Binary cross-entropy of probabilities against 0/1 labels."""
    p = np.clip(np.asarray(probability, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(label, dtype=np.float64)
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (p - y) / (p * (1.0 - p)) / p.size
    return float(value), grad


def regret(c_hat, c_bar, layer, problem, optimum=None):
    """Suboptimality under ``c_bar`` of the decision made for ``c_hat``.

    ``problem`` supplies ``objective(y, c)`` and ``objective_grad(y, c)``
    for the layer's decision ``y``.  ``optimum`` may carry the precomputed
    ``objective(y*(c_bar), c_bar)``.  Returns ``(value, gradient in
    c_hat)``.
    """
    report = layer.forward(c_hat)
    if optimum is None:
        optimum = problem.objective(layer.forward(c_bar).decision, c_bar)
    value = problem.objective(report.decision, c_bar) - optimum
    g = problem.objective_grad(report.decision, c_bar)
    grad = layer.backward_vjp(c_hat, report.x_star, g).grad_c
    return float(value), grad


def clip_gradient(grad, max_norm):
    """``grad`` scaled down to norm ``max_norm`` when it is longer."""
    norm = np.linalg.norm(grad)
    if max_norm is None or norm <= max_norm:
        return grad
    return grad * (max_norm / norm)


def train_predictor(model, loss_fn, features, targets, config,
                    on_epoch=None):
    """Mini-batch training of ``model`` on ``loss_fn(prediction, target)``.

    The sample order of every epoch is drawn from ``config.seed`` so runs
    are reproducible.  ``on_epoch(epoch, model)`` is called after each
    epoch.  Returns the mean training loss of each epoch.
    """
    X = linalg.as_matrix(features, 'features')
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) != len(X):
        raise exceptions.ShapeMismatch('targets', (len(X), '*'),
                                       targets.shape)
    rng = np.random.RandomState(config.seed)
    optimizer = config.make_optimizer(model.parameters())
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), config.batch_size):
            batch = order[start:start + config.batch_size]
            predictions = model.forward(X[batch])
            grad_out = np.zeros_like(predictions)
            for row, i in enumerate(batch):
                value, grad = loss_fn(predictions[row], targets[i])
                total += value
                grad_out[row] = clip_gradient(grad, config.clip_norm)
            model.zero_grad()
            model.backward(X[batch], grad_out / len(batch))
            optimizer.step(model.grads)
        history.append(total / len(X))
        LOG.info('epoch %d: training loss %.6g', epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, model)
    return history


def two_stage_baseline(model, features, targets, config, on_epoch=None):
    """Fit ``model`` to the true parameters by MSE alone."""
    train_predictor(model, mse, features, targets, config,
                    on_epoch=on_epoch)
    return model
