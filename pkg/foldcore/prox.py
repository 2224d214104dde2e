"""Closed-form projections and proximal operators with their VJPs.

Each operator comes as a pair of functions, ``op(x, ...)`` and
``op_vjp(x, ..., v)``, where ``x`` is the point the operator was applied
to.  At kinks the VJP takes the clamped branch: a coordinate exactly on a
bound or exactly at the threshold gets zero gradient.

The ``*Prox`` / ``*Projector`` classes bundle an operator with its
parameters so that the proximal-gradient steps in :mod:`foldcore.solvers`
can treat them uniformly through ``apply(s)`` and ``vjp(s, v)``;
``margin(s)`` is the distance of ``s`` from the nearest kink.
"""
import logging

import numpy as np

from foldcore import exceptions
from foldcore import linalg


LOG = logging.getLogger(__name__)

SUM_TOL = 1e-10
BISECTION_MAX_ITER = 200


def soft_threshold(x, lam):
    if lam < 0:
        raise ValueError('lambda must be nonnegative, received %r' % lam)
    x = linalg.as_vector(x, 'x')
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def soft_threshold_vjp(x, lam, v):
    x = linalg.as_vector(x, 'x')
    v = linalg.as_vector(v, 'v', len(x))
    return np.where(np.abs(x) > lam, v, 0.0)


def prox_l1(x, alpha, lam):
    """Proximal operator of ``alpha * lam * ||.||_1``."""
    return soft_threshold(x, alpha * lam)


class BoxSpec(object):
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)):
            raise exceptions.NonFiniteError('box bounds')
        if np.any(self.lo > self.hi):
            raise ValueError('Box lower bound exceeds upper bound')


def project_box(x, spec):
    x = linalg.as_vector(x, 'x')
    return np.minimum(np.maximum(x, spec.lo), spec.hi)


def project_box_vjp(x, spec, v):
    x = linalg.as_vector(x, 'x')
    v = linalg.as_vector(v, 'v', len(x))
    inside = (x > spec.lo) & (x < spec.hi)
    return np.where(inside, v, 0.0)


def project_nonneg(x):
    x = linalg.as_vector(x, 'x')
    return np.maximum(x, 0.0)


def project_nonneg_vjp(x, v):
    x = linalg.as_vector(x, 'x')
    v = linalg.as_vector(v, 'v', len(x))
    return np.where(x > 0, v, 0.0)


class CappedSimplexSpec(object):
    """The set ``{y : 0 <= y <= 1, sum(y) = k}`` in ``dim`` dimensions."""
    def __init__(self, k, dim):
        if not 0 < k < dim:
            raise ValueError('Capped simplex needs 0 < k < dim, received '
                             'k=%r, dim=%r' % (k, dim))
        self.k = float(k)
        self.dim = int(dim)


def _capped_sum(x, tau):
    return np.sum(np.clip(x - tau, 0.0, 1.0))


def _polished_shift(x, k, tau):
    # Assume the clamping pattern at tau is final and solve for the shift
    # exactly; accepted only when it reproduces the budget.
    shifted = x - tau
    free = (shifted > 0) & (shifted < 1)
    count = np.count_nonzero(free)
    if not count:
        return None
    saturated = np.count_nonzero(shifted >= 1)
    candidate = (np.sum(x[free]) + saturated - k) / count
    if abs(_capped_sum(x, candidate) - k) <= 1e-13 * (len(x) + k):
        return candidate
    return None


def capped_simplex_shift(x, k, max_iter=BISECTION_MAX_ITER):
    """The shift ``tau`` with ``sum(clip(x - tau, 0, 1)) == k``."""
    lo = np.min(x) - 1.0
    hi = np.max(x)
    tau = 0.5 * (lo + hi)
    for _ in range(max_iter):
        tau = 0.5 * (lo + hi)
        total = _capped_sum(x, tau)
        polished = _polished_shift(x, k, tau)
        if polished is not None:
            return polished
        if abs(total - k) < SUM_TOL:
            return tau
        if total > k:
            lo = tau
        else:
            hi = tau
    raise exceptions.NoConvergence('capped simplex bisection', tau,
                                   max_iter)


def _check_capped(x, spec):
    x = linalg.as_vector(x, 'x', spec.dim)
    return x


def project_capped_simplex(x, spec):
    x = _check_capped(x, spec)
    tau = capped_simplex_shift(x, spec.k)
    return np.clip(x - tau, 0.0, 1.0)


def _tie_set(x, tau):
    shifted = x - tau
    lower = shifted <= 0
    upper = shifted >= 1
    tau_lo = np.max(x[lower]) if lower.any() else -np.inf
    tau_hi = np.min(x[upper] - 1.0) if upper.any() else np.inf
    scale = 1e-12 * (1.0 + np.max(np.abs(x)))
    if tau_hi - tau_lo > scale:
        # The shift sits inside a flat stretch: small moves of x leave the
        # projection unchanged.
        return None
    tie = ((lower & (x >= tau_lo - scale)) |
           (upper & (x - 1.0 <= tau_hi + scale)))
    if not tie.any():
        raise exceptions.DegenerateFreeSet()
    return tie


def capped_simplex_margin(x, spec):
    """Distance of ``x`` from the nearest kink of the projection.

    Kinks sit where a coordinate of ``x - tau`` reaches 0 or 1.  Inside a
    flat stretch of shifts the midpoint of the stretch is used.
    """
    x = _check_capped(x, spec)
    tau = capped_simplex_shift(x, spec.k)
    shifted = x - tau
    if not ((shifted > 0) & (shifted < 1)).any():
        lower = shifted <= 0
        upper = shifted >= 1
        tau_lo = np.max(x[lower]) if lower.any() else tau
        tau_hi = np.min(x[upper] - 1.0) if upper.any() else tau
        tau = 0.5 * (tau_lo + tau_hi)
    return float(min(np.min(np.abs(x - tau)), np.min(np.abs(x - tau - 1.0))))


def project_capped_simplex_vjp(x, spec, v):
    """VJP of the capped-simplex projection.

    On the free set ``F = {i : 0 < y_i < 1}`` the Jacobian is the
    centering map ``I - 11^T / |F|``, and zero elsewhere.  When no
    coordinate is free the projection is locally constant unless two
    clamped coordinates tie at the shift; the tied coordinates then play
    the role of the free set.
    """
    x = _check_capped(x, spec)
    v = linalg.as_vector(v, 'v', spec.dim)
    tau = capped_simplex_shift(x, spec.k)
    shifted = x - tau
    free = (shifted > 0) & (shifted < 1)
    if not free.any():
        free = _tie_set(x, tau)
        if free is None:
            return np.zeros(spec.dim)
    out = np.zeros(spec.dim)
    out[free] = v[free] - np.mean(v[free])
    return out


class L1Prox(object):
    """Soft thresholding at a fixed level (prox of ``threshold * ||.||_1``)."""
    def __init__(self, threshold):
        self.threshold = threshold

    def apply(self, s):
        return soft_threshold(s, self.threshold)

    def vjp(self, s, v):
        return soft_threshold_vjp(s, self.threshold, v)

    def margin(self, s):
        return float(np.min(np.abs(np.abs(s) - self.threshold)))


class BoxProjector(object):
    def __init__(self, lo, hi):
        self.spec = BoxSpec(lo, hi)

    def apply(self, s):
        return project_box(s, self.spec)

    def vjp(self, s, v):
        return project_box_vjp(s, self.spec, v)

    def margin(self, s):
        return float(min(np.min(np.abs(s - self.spec.lo)),
                         np.min(np.abs(s - self.spec.hi))))


class NonnegProjector(object):
    def apply(self, s):
        return project_nonneg(s)

    def vjp(self, s, v):
        return project_nonneg_vjp(s, v)

    def margin(self, s):
        return float(np.min(np.abs(s)))


class CappedSimplexProjector(object):
    def __init__(self, k, dim):
        self.spec = CappedSimplexSpec(k, dim)

    def apply(self, s):
        return project_capped_simplex(s, self.spec)

    def vjp(self, s, v):
        return project_capped_simplex_vjp(s, self.spec, v)

    def margin(self, s):
        return capped_simplex_margin(s, self.spec)


class ProductProjector(object):
    """Projection onto a product set, block by block."""
    def __init__(self, blocks):
        # blocks: sequence of (size, projector)
        self.blocks = list(blocks)
        self.dim = sum(size for size, _ in self.blocks)

    def _split(self, s):
        start = 0
        for size, projector in self.blocks:
            yield slice(start, start + size), projector
            start += size

    def apply(self, s):
        s = linalg.as_vector(s, 's', self.dim)
        out = np.empty(self.dim)
        for part, projector in self._split(s):
            out[part] = projector.apply(s[part])
        return out

    def vjp(self, s, v):
        s = linalg.as_vector(s, 's', self.dim)
        v = linalg.as_vector(v, 'v', self.dim)
        out = np.empty(self.dim)
        for part, projector in self._split(s):
            out[part] = projector.vjp(s[part], v[part])
        return out

    def margin(self, s):
        s = linalg.as_vector(s, 's', self.dim)
        return min(projector.margin(s[part])
                   for part, projector in self._split(s))
