"""Vector helpers and the forward-model interface shared by solver and problems.

Vectors are 1-D float64 numpy arrays. Every helper checks dimensions
explicitly; nothing relies on numpy broadcasting.
"""

import numpy as np
from scipy.linalg.blas import dnrm2

__all__ = [
    'as_vector', 'inner', 'norm', 'ForwardModel', 'Linearization',
    'LinearModel', 'check_adjoint', 'check_jacobian_fd',
]


def as_vector(x, dim=None, name='vector'):
    """Return `x` as a finite 1-D float64 array, optionally of length `dim`."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError('{} must be one-dimensional, got shape {}'.format(name, v.shape))
    if dim is not None and v.shape[0] != dim:
        raise ValueError('{} has dimension {}, expected {}'.format(name, v.shape[0], dim))
    if not np.all(np.isfinite(v)):
        raise FloatingPointError('{} contains non-finite entries'.format(name))
    return v


def _same_dim(u, v):
    if u.shape != v.shape:
        raise ValueError('dimension mismatch: {} vs {}'.format(u.shape, v.shape))


def inner(u, v):
    """Euclidean inner product of two vectors of equal dimension."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim != 1 or v.ndim != 1:
        raise ValueError('inner expects 1-D vectors')
    _same_dim(u, v)
    return float(np.dot(u, v))


def norm(u):
    """Euclidean norm via BLAS nrm2, which rescales so tiny or huge entries do not under/overflow."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError('norm expects a 1-D vector')
    if u.size == 0:
        return 0.0
    return float(dnrm2(u))


class Linearization:
    """The derivative of a model frozen at one point.

    Models whose Jacobian actions share expensive state (e.g. a forward
    solution) override :meth:`ForwardModel.linearize` to return a subclass
    that caches it.
    """

    def __init__(self, model, x):
        self.model = model
        self.x = x

    def __call__(self, h):
        return self.model.jacobian_apply(self.x, h)

    def adjoint(self, r):
        return self.model.adjoint_apply(self.x, r)


class ForwardModel:
    """A nonlinear operator F between two finite-dimensional spaces.

    Subclasses implement :meth:`_apply`, :meth:`_jacobian` and
    :meth:`_adjoint`; the public methods validate shapes and finiteness.

    Attributes
    ----------
    domain_dim : int
        Dimension of the parameter space.
    range_dim : int
        Dimension of the data space.
    """

    domain_dim = None
    range_dim = None

    def __call__(self, x):
        return self.apply(x)

    def apply(self, x):
        x = as_vector(x, self.domain_dim, 'x')
        return as_vector(self._apply(x), self.range_dim, 'F(x)')

    def jacobian_apply(self, x, h):
        x = as_vector(x, self.domain_dim, 'x')
        h = as_vector(h, self.domain_dim, 'h')
        return as_vector(self._jacobian(x, h), self.range_dim, "F'(x)h")

    def adjoint_apply(self, x, r):
        x = as_vector(x, self.domain_dim, 'x')
        r = as_vector(r, self.range_dim, 'r')
        return as_vector(self._adjoint(x, r), self.domain_dim, "F'(x)*r")

    def linearize(self, x):
        """Return ``(F(x), deriv)`` where `deriv` applies F'(x) and its adjoint."""
        x = as_vector(x, self.domain_dim, 'x')
        return self.apply(x), Linearization(self, x)

    def _apply(self, x):
        raise NotImplementedError

    def _jacobian(self, x, h):
        raise NotImplementedError

    def _adjoint(self, x, r):
        raise NotImplementedError


class LinearModel(ForwardModel):
    """F(x) = M x + offset, with the exact transpose as adjoint."""

    def __init__(self, matrix, offset=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.range_dim, self.domain_dim = self.matrix.shape
        if offset is None:
            offset = np.zeros(self.range_dim)
        self.offset = as_vector(offset, self.range_dim, 'offset')

    def __repr__(self):
        return 'LinearModel(shape={})'.format(self.matrix.shape)

    def _apply(self, x):
        return self.matrix @ x + self.offset

    def _jacobian(self, x, h):
        return self.matrix @ h

    def _adjoint(self, x, r):
        return self.matrix.T @ r


def check_adjoint(model, x, trials=10, seed=0):
    """Largest relative violation of <F'(x)h, r> = <h, F'(x)*r> over random pairs.

    The discrepancy of one pair is
    ``|<F'(x)h, r> - <h, F'(x)*r>| / (|F'(x)h| |r| + eps)``.
    """
    rng = np.random.default_rng(seed)
    _, deriv = model.linearize(x)
    worst = 0.0
    for _ in range(trials):
        h = rng.standard_normal(model.domain_dim)
        r = rng.standard_normal(model.range_dim)
        jh = deriv(h)
        jtr = deriv.adjoint(r)
        lhs = inner(jh, r)
        rhs = inner(h, jtr)
        if not (np.isfinite(lhs) and np.isfinite(rhs)):
            raise FloatingPointError('non-finite value in adjoint check')
        scale = norm(jh) * norm(r) + np.finfo(float).eps
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def check_jacobian_fd(model, x, h, steps=(1e-2, 1e-4, 1e-6)):
    """Relative one-sided finite-difference errors of F'(x)h for each step t.

    Returns ``|(F(x+th) - F(x))/t - F'(x)h| / |F'(x)h|`` per step (absolute
    error when F'(x)h vanishes).
    """
    x = as_vector(x, model.domain_dim, 'x')
    h = as_vector(h, model.domain_dim, 'h')
    fx, deriv = model.linearize(x)
    jh = deriv(h)
    scale = norm(jh)
    if scale == 0.0:
        scale = 1.0
    errors = []
    for t in steps:
        fd = (model.apply(x + t * h) - fx) / t
        errors.append(norm(fd - jh) / scale)
    return errors
