"""Coefficient identification in ``-Laplace(u) + c u = g`` on the unit square.

The grid has n x n interior nodes at ``(i h, j h)``, ``i, j = 1..n``,
``h = 1/(n+1)``, with homogeneous Dirichlet data eliminated into the
five-point stencil. Grid functions are flattened row by row (row index
follows y, column index follows x). The forward map is

    F(c) = (-Laplace_n + diag(c))^{-1} z.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter
from scipy.sparse.linalg import spsolve

from .krylov import NotPositiveDefinite, cg
from .linops import ForwardModel, Linearization, as_vector, norm

__all__ = [
    'grid_spacing', 'grid_coordinates', 'stencil_apply', 'laplacian_apply',
    'EllipticProblem', 'Phantom', 'source_g', 'coefficient_c0', 'make_phantom',
    'naive_reconstruction', 'add_relative_noise', 'write_grid_csv',
    'read_grid_csv', 'SolveError', 'forward_solve', 'pde_jacobian_apply', 'pde_adjoint_apply',
]

log = logging.getLogger(__name__)

PHANTOM_BLUR_STD = 0.05


class SolveError(RuntimeError):
    """The forward solve did not reach its tolerance."""


def grid_spacing(n):
    return 1.0 / (n + 1)


def grid_coordinates(n):
    """Node coordinates ``(X, Y)`` as n x n arrays in row-major layout."""
    t = np.arange(1, n + 1) * grid_spacing(n)
    return np.meshgrid(t, t, indexing='xy')


def _check_len(n, v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n * n,):
        raise ValueError('{} must have length n^2 = {}, got shape {}'.format(name, n * n, v.shape))
    return v


def laplacian_apply(n, v):
    """Five-point ``Laplace_n v`` with zero Dirichlet padding."""
    v = _check_len(n, v, 'v')
    grid = v.reshape(n, n)
    out = -4.0 * grid
    out[1:, :] += grid[:-1, :]
    out[:-1, :] += grid[1:, :]
    out[:, 1:] += grid[:, :-1]
    out[:, :-1] += grid[:, 1:]
    h = grid_spacing(n)
    return (out / (h * h)).ravel()


def stencil_apply(n, c, v):
    """Return ``(-Laplace_n + diag(c)) v``."""
    c = _check_len(n, c, 'c')
    v = _check_len(n, v, 'v')
    return c * v - laplacian_apply(n, v)


def source_g(x, y):
    return 200.0 * np.exp(-10.0 * (x - 0.5) ** 2 - 10.0 * (y - 0.5) ** 2)


def coefficient_c0(x, y):
    """Piecewise-constant coefficient: 10 inside two disks of radius 0.1, else 0."""
    d1 = np.hypot(x - 0.25, y - 0.5)
    d2 = np.hypot(x - 0.75, y - 0.5)
    return np.where(np.minimum(d1, d2) < 0.1, 10.0, 0.0)


class _PdeLinearization(Linearization):
    def __init__(self, model, c, u):
        super().__init__(model, c)
        self.u = u

    def __call__(self, h):
        h = as_vector(h, self.model.domain_dim, 'h')
        return self.model.jacobian_at(self.x, self.u, h)

    def adjoint(self, r):
        r = as_vector(r, self.model.range_dim, 'r')
        return self.model.adjoint_at(self.x, self.u, r)


class EllipticProblem(ForwardModel):
    """Forward operator ``c -> (-Laplace_n + diag(c))^{-1} z``.

    Parameters
    ----------
    n : int
        Nodes per dimension.
    z : array
        Right-hand side of length n^2.
    solve_tol : float
        Relative residual tolerance of every solve with the stencil operator.
    max_solve_iters : int, optional
        Iteration cap of those solves; defaults to ``10 n^2``.
    """

    def __init__(self, n, z, solve_tol=1e-12, max_solve_iters=None):
        if n < 1:
            raise ValueError('n must be positive')
        self.n = int(n)
        self.h = grid_spacing(n)
        self.z = _check_len(n, z, 'z').copy()
        self.solve_tol = float(solve_tol)
        self.max_solve_iters = max_solve_iters or 10 * n * n
        self.domain_dim = self.range_dim = n * n

    def __repr__(self):
        return 'EllipticProblem(n={}, solve_tol={:g})'.format(self.n, self.solve_tol)

    def solve(self, c, rhs):
        """Solve ``(-Laplace_n + diag(c)) v = rhs`` by conjugate gradients."""
        n = self.n
        if not np.any(rhs):
            return np.zeros_like(rhs)

        def op(v):
            return stencil_apply(n, c, v)

        target = self.solve_tol * norm(rhs)
        v, iters = None, 0
        # restart from the current iterate when the recursive residual has drifted
        for _ in range(5):
            try:
                v, used, _, _ = cg(op, rhs, self.max_solve_iters - iters,
                                   rel_tol=self.solve_tol, x0=v, strict=True)
            except NotPositiveDefinite as exc:
                raise SolveError('stencil operator lost positive definiteness: {}'.format(exc))
            iters += used
            true_res = norm(op(v) - rhs)
            if true_res <= target or iters >= self.max_solve_iters:
                break
        if true_res > target:
            raise SolveError('forward solve stalled at relative residual {:.3e} after {} '
                             'iterations'.format(true_res / norm(rhs), iters))
        return v

    def forward_solve(self, c):
        c = as_vector(c, self.domain_dim, 'c')
        return self.solve(c, self.z)

    def sparse_operator(self, c):
        n, h = self.n, self.h
        second_diff = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
        eye = sp.identity(n)
        lap = (sp.kron(eye, second_diff) + sp.kron(second_diff, eye)) / (h * h)
        return (lap + sp.diags(as_vector(c, self.domain_dim, 'c'))).tocsc()

    def solve_direct(self, c, rhs=None):
        """Sparse direct solve, used to synthesize data at full precision."""
        rhs = self.z if rhs is None else rhs
        return spsolve(self.sparse_operator(c), rhs)

    def jacobian_at(self, c, u, h):
        return -self.solve(c, h * u)

    def adjoint_at(self, c, u, r):
        return -u * self.solve(c, r)

    def _apply(self, c):
        return self.forward_solve(c)

    def _jacobian(self, c, h):
        return self.jacobian_at(c, self.forward_solve(c), h)

    def _adjoint(self, c, r):
        return self.adjoint_at(c, self.forward_solve(c), r)

    def linearize(self, c):
        c = as_vector(c, self.domain_dim, 'c')
        u = self.forward_solve(c)
        return u, _PdeLinearization(self, c, u)

    def dense_operator(self, c):
        """Assembled stencil matrix; for tests and small n only."""
        n = self.n
        eye = np.eye(n * n)
        return np.column_stack([stencil_apply(n, c, eye[:, j]) for j in range(n * n)])


def pde_jacobian_apply(prob, c, u_cache, hdir):
    """``F'(c) h = -L_c^{-1}(h * u)`` with ``u = F(c)`` supplied by the caller."""
    return prob.jacobian_at(as_vector(c, prob.domain_dim), as_vector(u_cache, prob.range_dim),
                            as_vector(hdir, prob.domain_dim))


def pde_adjoint_apply(prob, c, u_cache, r):
    """``F'(c)* r = -u * L_c^{-1} r``; uses the symmetry of the stencil operator."""
    return prob.adjoint_at(as_vector(c, prob.domain_dim), as_vector(u_cache, prob.range_dim),
                           as_vector(r, prob.range_dim))


def forward_solve(prob, c):
    return prob.forward_solve(c)


@dataclass(frozen=True)
class Phantom:
    """Ground truth for the benchmark: coefficient, state and sampled source."""

    n: int
    c_true: np.ndarray
    u_true: np.ndarray
    g_grid: np.ndarray
    c0_grid: np.ndarray
    problem: EllipticProblem


def make_phantom(n, blur_std=PHANTOM_BLUR_STD, solve_tol=1e-12):
    """Build the two-disk coefficient phantom and its exact state on an n x n grid.

    The disk indicator is blurred with a unit-mass Gaussian of standard
    deviation `blur_std` (domain units), zero-padded at the boundary. The
    state is computed with a direct solve: pointwise division amplifies any
    solver residual by roughly ``1/min(u)``, so data generated at the CG
    tolerance would not round-trip through :func:`naive_reconstruction`.
    """
    if n < 4:
        raise ValueError('phantom needs n >= 4')
    X, Y = grid_coordinates(n)
    g_grid = source_g(X, Y).ravel()
    c0 = coefficient_c0(X, Y)
    sigma_cells = blur_std / grid_spacing(n)
    c_true = gaussian_filter(c0, sigma=sigma_cells, mode='constant', cval=0.0, truncate=4.0)
    c_true = np.clip(c_true, 0.0, None).ravel()
    prob = EllipticProblem(n, g_grid, solve_tol=solve_tol)
    u_true = prob.solve_direct(c_true)
    return Phantom(n, c_true, u_true, g_grid, c0.ravel(), prob)


def naive_reconstruction(n, u, g_grid):
    """Recover c pointwise from ``c = (g + Laplace_n u) / u``."""
    u = _check_len(n, u, 'u')
    g_grid = _check_len(n, g_grid, 'g_grid')
    if np.any(np.abs(u) < 1e-300):
        raise ZeroDivisionError('u vanishes at some node; division is undefined')
    return (g_grid + laplacian_apply(n, u)) / u


def add_relative_noise(u_true, pct, seed):
    """Perturb `u_true` by a random direction of norm ``pct * |u_true|``.

    Returns ``(u_noisy, delta)`` with ``|u_noisy - u_true| = delta``.
    """
    u_true = as_vector(u_true, name='u_true')
    if pct < 0:
        raise ValueError('noise percentage must be nonnegative')
    delta = pct * norm(u_true)
    if delta == 0:
        return u_true.copy(), 0.0
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(u_true.shape)
    while not np.any(e):
        e = rng.standard_normal(u_true.shape)
    return u_true + delta * e / norm(e), delta


def write_grid_csv(path, values, n):
    grid = np.asarray(values, dtype=float).reshape(n, n)
    with open(path, 'w', newline='') as fh:
        for row in grid:
            fh.write(','.join(format(v, '.17g') for v in row))
            fh.write('\n')


def read_grid_csv(path):
    with open(path) as fh:
        rows = [[float(v) for v in line.split(',')] for line in fh if line.strip()]
    return np.array(rows)
