"""Matrix-free conjugate gradients.

:func:`cg` solves a generic SPD system given only the operator action.
:func:`cg_normal_solve` applies it to the regularized normal equations
``(A*A + lam I) s = A* r`` of a Levenberg-Marquardt step.
"""

from dataclasses import dataclass

import numpy as np

from .linops import as_vector

__all__ = ['CgConfig', 'CgReport', 'NotPositiveDefinite', 'cg', 'cg_normal_solve']

TRUNCATED = 'truncated'
TO_TOLERANCE = 'to_tolerance'


class NotPositiveDefinite(ArithmeticError):
    """Raised when CG meets a direction of non-positive curvature."""


@dataclass(frozen=True)
class CgConfig:
    """Inner solver budget.

    In ``truncated`` mode exactly `max_iters` direction updates are made
    (fewer only on an exact solve) and `rel_tol` is ignored. In
    ``to_tolerance`` mode iteration stops once the residual is at most
    ``rel_tol * |rhs|`` or `max_iters` is exhausted.
    """

    max_iters: int = 2
    rel_tol: float = 0.0
    mode: str = TRUNCATED

    def __post_init__(self):
        if self.mode not in (TRUNCATED, TO_TOLERANCE):
            raise ValueError('unknown CG mode {!r}'.format(self.mode))
        if self.max_iters < 1:
            raise ValueError('max_iters must be positive')
        if not self.rel_tol >= 0:
            raise ValueError('rel_tol must be >= 0')

    @classmethod
    def truncated(cls, steps):
        return cls(max_iters=steps, rel_tol=0.0, mode=TRUNCATED)

    @classmethod
    def exact(cls, rel_tol=1e-12, max_iters=1000):
        return cls(max_iters=max_iters, rel_tol=rel_tol, mode=TO_TOLERANCE)


@dataclass(frozen=True)
class CgReport:
    iterations_used: int
    final_normal_residual: float
    breakdown: bool = False
    mode: str = TRUNCATED


def cg(op, rhs, max_iters, rel_tol=0.0, truncated=False, x0=None,
       strict=False, history=None):
    """Conjugate gradients for ``op(x) = rhs`` with SPD `op`.

    Parameters
    ----------
    op : callable
        Action of the SPD operator.
    rhs : array
        Right-hand side.
    max_iters : int
        Cap on direction updates.
    rel_tol : float
        Stop once the recursive residual norm is at most ``rel_tol*|rhs|``.
        Ignored when `truncated` is set.
    x0 : array, optional
        Starting guess (zero by default).
    strict : bool
        Raise :class:`NotPositiveDefinite` on non-positive curvature instead
        of reporting a breakdown.
    history : list, optional
        Receives the residual norm after every update.

    Returns
    -------
    x : array
    iters : int
    resnorm : float
        Norm of the recursively updated residual.
    breakdown : bool
    """
    if x0 is None:
        x = np.zeros_like(rhs)
        r = rhs.copy()
    else:
        x = x0.copy()
        r = rhs - op(x)
    rr = float(np.dot(r, r))
    if not np.isfinite(rr):
        raise FloatingPointError('non-finite right-hand side or residual in CG')
    target = 0.0 if truncated else rel_tol * float(np.sqrt(np.dot(rhs, rhs)))
    if rr == 0.0 or np.sqrt(rr) <= target:
        return x, 0, float(np.sqrt(rr)), False
    p = r.copy()
    tiny = np.finfo(float).tiny
    for it in range(1, max_iters + 1):
        q = op(p)
        curv = float(np.dot(p, q))
        if not np.isfinite(curv):
            raise FloatingPointError('non-finite curvature in CG')
        if curv <= tiny * max(1.0, rr):
            if strict:
                raise NotPositiveDefinite(
                    'operator is not positive definite (p.Ap = {:.3e})'.format(curv))
            return x, it - 1, float(np.sqrt(rr)), True
        step = rr / curv
        x += step * p
        r -= step * q
        rr_new = float(np.dot(r, r))
        if not np.isfinite(rr_new):
            raise FloatingPointError('non-finite residual in CG')
        if history is not None:
            history.append(np.sqrt(rr_new))
        if rr_new == 0.0 or np.sqrt(rr_new) <= target:
            return x, it, float(np.sqrt(rr_new)), False
        p *= rr_new / rr
        p += r
        rr = rr_new
    return x, max_iters, float(np.sqrt(rr)), False


def cg_normal_solve(model, lin_point, residual, lam, cfg, deriv=None):
    """Solve ``(A*A + lam I) s = A* residual`` with ``A = F'(lin_point)``.

    Only the Jacobian and adjoint actions of `model` are used. CG starts at
    ``s = 0``.

    Parameters
    ----------
    model : ForwardModel
    lin_point : array
        Linearization point.
    residual : array
        Data-space vector, usually ``y - F(lin_point)``.
    lam : float
        Positive damping parameter.
    cfg : CgConfig
    deriv : Linearization, optional
        Pre-computed linearization at `lin_point`, reused when given.

    Returns
    -------
    step : array
    report : CgReport
    """
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError('lambda must be positive and finite, got {!r}'.format(lam))
    lin_point = as_vector(lin_point, model.domain_dim, 'lin_point')
    residual = as_vector(residual, model.range_dim, 'residual')
    if deriv is None:
        _, deriv = model.linearize(lin_point)
    rhs = deriv.adjoint(residual)

    def normal_op(v):
        return deriv.adjoint(deriv(v)) + lam * v

    step, iters, resnorm, breakdown = cg(
        normal_op, rhs, cfg.max_iters, rel_tol=cfg.rel_tol,
        truncated=cfg.mode == TRUNCATED)
    if not np.all(np.isfinite(step)):
        raise FloatingPointError('non-finite CG iterate')
    return step, CgReport(iters, resnorm, breakdown, cfg.mode)
