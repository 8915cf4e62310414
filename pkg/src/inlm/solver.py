"""Inertial Levenberg-Marquardt iteration.

Each outer step extrapolates ``w_k = x_k + alpha_k (x_k - x_{k-1})`` and
then takes a Levenberg-Marquardt step from `w_k`::

    (A*A + lam_k I) s_k = A* (y - F(w_k)),   A = F'(w_k),
    x_{k+1} = w_k + s_k.

:func:`run_noisy` stops by the discrepancy principle
``|F(w_k) - y_delta| <= tau * delta``; :func:`run_exact` stops when the
residual drops below a small numerical tolerance. With ``alpha_k = 0`` the
method is plain Levenberg-Marquardt.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .krylov import TO_TOLERANCE, CgConfig, CgReport, cg_normal_solve
from .linops import as_vector, norm

__all__ = [
    'AssumptionWarning', 'ThetaSchedule', 'AlphaSchedule', 'LambdaSchedule',
    'SolverConfig', 'IterateState', 'StepRecord', 'RunTrace', 'extrapolate',
    'inertial_weight', 'inlm_step', 'run_exact', 'run_noisy', 'kstar_bound',
    'discrepancy_index', 'IdentityCheck', 'IdentityReport',
    'verify_iteration_identities',
]

log = logging.getLogger(__name__)

CONSTANT = 'constant'
THEORY = 'theory'

STOP_DISCREPANCY = 'discrepancy'
STOP_EXACT = 'exact_fit'
STOP_MAX_ITERS = 'max_iters'


class AssumptionWarning(UserWarning):
    """A parameter choice falls outside the range covered by the convergence theory."""


def inverse_square(k):
    return 1.0 / (k * k)


@dataclass(frozen=True)
class ThetaSchedule:
    """Summable nonnegative sequence bounding the inertial contribution.

    `total` is the value of the full series; it enters the stopping-index
    bound only.
    """

    term: Callable[[int], float] = inverse_square
    total: float = math.pi ** 2 / 6

    def __call__(self, k):
        value = float(self.term(k))
        if value < 0:
            raise ValueError('theta_{} = {} is negative'.format(k, value))
        return value

    def partial_sum(self, n):
        return math.fsum(self(k) for k in range(1, n + 1))


@dataclass(frozen=True)
class AlphaSchedule:
    """How the inertial weights are chosen.

    ``constant`` mode returns `value` at every step; values up to 1 are
    accepted for experiments outside the theory. ``theory`` mode uses
    `value` as the cap of the adaptive three-way minimum and requires
    ``value < 1``. `monotone` additionally clamps theory-mode weights to be
    non-increasing from the second step on.
    """

    mode: str = CONSTANT
    value: float = 0.0
    rho: float = math.inf
    theta: ThetaSchedule = field(default_factory=ThetaSchedule)
    monotone: bool = False

    def __post_init__(self):
        if self.mode not in (CONSTANT, THEORY):
            raise ValueError('unknown alpha mode {!r}'.format(self.mode))
        if self.mode == THEORY and not 0 <= self.value < 1:
            raise ValueError('theory-mode alpha cap must lie in [0, 1)')
        if self.mode == CONSTANT and not 0 <= self.value <= 1:
            raise ValueError('constant alpha must lie in [0, 1]')
        if not self.rho > 0:
            raise ValueError('rho must be positive')

    @classmethod
    def constant(cls, alpha):
        return cls(mode=CONSTANT, value=float(alpha))

    @classmethod
    def theory(cls, cap, rho, theta=None, monotone=False):
        return cls(mode=THEORY, value=float(cap), rho=float(rho),
                   theta=theta or ThetaSchedule(), monotone=monotone)


@dataclass(frozen=True)
class LambdaSchedule:
    """Damping parameters; the last entry repeats once the sequence runs out."""

    values: tuple = (1.0,)
    lambda_max: Optional[float] = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError('lambda schedule is empty')
        if any(not (np.isfinite(v) and v > 0) for v in vals):
            raise ValueError('lambda values must be positive and finite')
        if self.lambda_max is not None and max(vals) > self.lambda_max:
            raise ValueError('lambda exceeds lambda_max')
        object.__setattr__(self, 'values', vals)

    @classmethod
    def constant(cls, lam):
        return cls(values=(float(lam),))

    def at(self, k):
        return self.values[min(k, len(self.values) - 1)]

    @property
    def largest(self):
        return self.lambda_max if self.lambda_max is not None else max(self.values)


@dataclass(frozen=True)
class SolverConfig:
    """Scalar knobs of a run.

    `eta`, `q` and `C` are the nonlinearity constant, the damping ratio and
    a bound on the Jacobian norm. They are only used to check the
    parameter choice and to drive the identity verifier; a run proceeds
    regardless of their values.
    """

    alpha: AlphaSchedule = field(default_factory=AlphaSchedule)
    lam: LambdaSchedule = field(default_factory=LambdaSchedule)
    tau: float = 1.0
    delta: float = 0.0
    cg: CgConfig = field(default_factory=CgConfig)
    max_outer_iters: int = 100
    exact_zero_tol: Optional[float] = None
    eta: Optional[float] = None
    q: Optional[float] = None
    C: Optional[float] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError('tau must be positive')
        if not self.delta >= 0:
            raise ValueError('delta must be nonnegative')
        if self.max_outer_iters < 1:
            raise ValueError('max_outer_iters must be positive')
        if self.eta is not None and not 0 <= self.eta < 1:
            raise ValueError('eta must lie in [0, 1)')

    def with_(self, **changes):
        return replace(self, **changes)

    def check_assumptions(self):
        """Warn about parameter choices the convergence theory does not cover."""
        if self.eta is not None and self.q is not None:
            if not self.eta < self.q < 1:
                warnings.warn('q={} is not in (eta, 1)'.format(self.q), AssumptionWarning, 2)
            elif self.delta > 0:
                tau_min = (self.eta + 1) / (self.q - self.eta)
                if not self.tau > tau_min:
                    warnings.warn('tau={} does not exceed (eta+1)/(q-eta)={:.4g}'.format(
                        self.tau, tau_min), AssumptionWarning, 2)
        if self.q is not None and self.C is not None and 0 < self.q < 1:
            lam_min = self.q * self.C ** 2 / (1 - self.q)
            if min(self.lam.values) <= lam_min:
                warnings.warn('lambda_k <= q C^2/(1-q) = {:.4g}'.format(lam_min),
                              AssumptionWarning, 2)


@dataclass(frozen=True)
class IterateState:
    """Iterates at outer index k; `w` is the extrapolated point w_k."""

    k: int
    x_prev: np.ndarray
    x_cur: np.ndarray
    w: np.ndarray
    alpha_k: float
    x0: np.ndarray
    ball_exit: bool = False

    @classmethod
    def initial(cls, x0):
        x0 = as_vector(x0, name='x0').copy()
        return cls(0, x0, x0, x0, 0.0, x0)


@dataclass(frozen=True)
class StepRecord:
    k: int
    alpha_k: float
    lambda_k: float
    residual_norm: float
    step_norm: float
    distance: float = math.nan
    cg_report: Optional[CgReport] = None
    ball_exit: bool = False


@dataclass
class RunTrace:
    """Per-iteration records of one run.

    ``records[k]`` describes outer index k: the residual at `w_k`, the
    weight `alpha_k`, and the norm of the step taken from `w_k` (zero at
    the stopping index). When iterates are stored, `xs` holds x_0, x_1, ...
    and `ws` holds w_0, w_1, ...
    """

    records: List[StepRecord] = field(default_factory=list)
    k_star: Optional[int] = None
    stop_reason: Optional[str] = None
    final_residual: float = math.nan
    xs: Optional[list] = None
    ws: Optional[list] = None
    cg_mode: Optional[str] = None

    def append(self, record):
        if record.k != len(self.records):
            raise ValueError('trace records must be contiguous')
        self.records.append(record)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)


def extrapolate(x_cur, x_prev, alpha_k):
    """Return ``x_cur + alpha_k (x_cur - x_prev)``; a copy of `x_cur` when alpha_k is 0."""
    x_cur = np.asarray(x_cur, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    if x_cur.shape != x_prev.shape:
        raise ValueError('dimension mismatch: {} vs {}'.format(x_cur.shape, x_prev.shape))
    if alpha_k == 0:
        return x_cur.copy()
    return x_cur + alpha_k * (x_cur - x_prev)


def _weight(x_cur, x_prev, x0, k, sched):
    if k < 1:
        raise ValueError('inertial weights are defined for k >= 1')
    if sched.mode == CONSTANT:
        return sched.value, False
    gap_norm = norm(np.asarray(x_cur) - np.asarray(x_prev))
    if gap_norm == 0:
        return 0.0, False
    room = sched.rho - norm(np.asarray(x_cur) - np.asarray(x0))
    if room < 0:
        return 0.0, True
    theta = sched.theta(k)
    # divide twice: gap_norm**2 underflows to 0 for displacements below ~1e-162
    alpha = min(theta / gap_norm / gap_norm, min(theta, room) / gap_norm, sched.value)
    return max(alpha, 0.0), False


def inertial_weight(x_cur, x_prev, x0, k, sched):
    """Inertial weight alpha_k for the displacement ``x_cur - x_prev``.

    In theory mode this is::

        min(theta_k / d**2, min(theta_k, rho - |x_cur - x0|) / d, cap)

    with ``d = |x_cur - x_prev|``, and 0 when d vanishes or when `x_cur`
    has left the ball of radius rho around `x0`.
    """
    return _weight(x_cur, x_prev, x0, k, sched)[0]


def _distance(x, x_true):
    return norm(x - x_true) if x_true is not None else math.nan


def inlm_step(model, state, y, cfg, lin=None, x_true=None):
    """Advance one outer step from `state`.

    Parameters
    ----------
    model : ForwardModel
    state : IterateState
    y : array
        Data.
    cfg : SolverConfig
    lin : tuple, optional
        ``(F(w_k), deriv)`` if already computed by the caller.
    x_true : array, optional
        Ground truth; only used for the distance column.

    Returns
    -------
    next_state : IterateState
    record : StepRecord
        Describes index k (the step just taken).
    """
    k = state.k
    lam = cfg.lam.at(k)
    if lin is None:
        lin = model.linearize(state.w)
    fw, deriv = lin
    residual = y - fw
    step, report = cg_normal_solve(model, state.w, residual, lam, cfg.cg, deriv=deriv)
    x_next = state.w + step
    if not np.all(np.isfinite(x_next)):
        raise FloatingPointError('non-finite iterate at k={}'.format(k + 1))
    alpha_next, ball_exit = _weight(x_next, state.x_cur, state.x0, k + 1, cfg.alpha)
    if cfg.alpha.monotone and cfg.alpha.mode == THEORY and k >= 1:
        alpha_next = min(alpha_next, state.alpha_k)
    if ball_exit:
        log.warning('iterate x_%d left the ball of radius %g; alpha set to 0', k + 1, cfg.alpha.rho)
    w_next = extrapolate(x_next, state.x_cur, alpha_next)
    record = StepRecord(k=k, alpha_k=state.alpha_k, lambda_k=lam,
                        residual_norm=norm(residual), step_norm=norm(step),
                        distance=_distance(state.x_cur, x_true), cg_report=report,
                        ball_exit=state.ball_exit)
    nxt = IterateState(k + 1, state.x_cur, x_next, w_next, alpha_next, state.x0, ball_exit)
    return nxt, record


def _run(model, y, x0, cfg, threshold, stop_reason, x_true, store_iterates, callback):
    y = as_vector(y, model.range_dim, 'y')
    x0 = as_vector(x0, model.domain_dim, 'x0')
    if x_true is not None:
        x_true = as_vector(x_true, model.domain_dim, 'x_true')
    cfg.check_assumptions()
    trace = RunTrace(cg_mode=cfg.cg.mode)
    if store_iterates:
        trace.xs, trace.ws = [x0.copy()], [x0.copy()]
    state = IterateState.initial(x0)
    while state.k < cfg.max_outer_iters:
        fw, deriv = model.linearize(state.w)
        rnorm = norm(y - fw)
        if not rnorm > threshold:
            trace.append(StepRecord(
                k=state.k, alpha_k=state.alpha_k, lambda_k=cfg.lam.at(state.k),
                residual_norm=rnorm, step_norm=0.0,
                distance=_distance(state.x_cur, x_true),
                ball_exit=state.ball_exit))
            trace.k_star = state.k
            trace.stop_reason = stop_reason
            trace.final_residual = rnorm
            if store_iterates:
                trace.xs.append(state.w.copy())
            log.info('stopped at k=%d (%s), residual %.6g', state.k, stop_reason, rnorm)
            return state.w.copy(), trace
        state, record = inlm_step(model, state, y, cfg, lin=(fw, deriv), x_true=x_true)
        trace.append(record)
        if store_iterates:
            trace.xs.append(state.x_cur.copy())
            trace.ws.append(state.w.copy())
        if callback is not None:
            callback(state)
    trace.stop_reason = STOP_MAX_ITERS
    trace.final_residual = norm(y - model.apply(state.x_cur))
    return state.x_cur.copy(), trace


def run_exact(model, y, x0, cfg, x_true=None, store_iterates=False, callback=None):
    """Run the iteration on exact data.

    Stops with ``stop_reason='exact_fit'`` once ``|F(w_k) - y|`` is at most
    ``cfg.exact_zero_tol`` (default ``1e-13 |y|``), returning ``w_k``.
    Otherwise returns the last iterate after `max_outer_iters` steps.
    `callback`, if given, receives the new :class:`IterateState` after
    every step.
    """
    y = as_vector(y, model.range_dim, 'y')
    tol = cfg.exact_zero_tol
    if tol is None:
        tol = 1e-13 * norm(y)
    return _run(model, y, x0, cfg, tol, STOP_EXACT, x_true, store_iterates, callback)


def run_noisy(model, y_delta, x0, cfg, x_true=None, store_iterates=False, callback=None):
    """Run the iteration on noisy data with discrepancy-principle stopping.

    The loop runs while ``|F(w_k) - y_delta| > tau * delta``. At the first
    index where this fails, ``k_star`` is set, no step is taken and ``w_k``
    is returned. With ``delta = 0`` only an exact fit stops the run, which
    is how fixed-budget runs are expressed.
    """
    return _run(model, y_delta, x0, cfg, cfg.tau * cfg.delta, STOP_DISCREPANCY,
                x_true, store_iterates, callback)


def discrepancy_index(trace, threshold):
    """First recorded k with residual at most `threshold`, or None."""
    for rec in trace.records:
        if rec.residual_norm <= threshold:
            return rec.k
    return None


def kstar_bound(lambda_max, q, tau, delta, eta, rho, theta_sum):
    """Upper bound on the discrepancy stopping index::

        lambda_max * (rho**2 + 2*theta_sum) / (2 q tau delta**2 ((q-eta) tau - (eta+1)))
    """
    margin = (q - eta) * tau - (eta + 1)
    if not margin > 0:
        raise ValueError('bound undefined: (q-eta)*tau - (eta+1) = {:.4g} <= 0'.format(margin))
    if not delta > 0:
        raise ValueError('bound requires delta > 0')
    return lambda_max * (rho ** 2 + 2 * theta_sum) / (2 * q * tau * delta ** 2 * margin)


@dataclass(frozen=True)
class IdentityCheck:
    k: int
    name: str
    value: float
    passed: bool


@dataclass
class IdentityReport:
    checks: List[IdentityCheck] = field(default_factory=list)
    mode_mismatch: bool = False

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def by_name(self, name):
        return [c for c in self.checks if c.name == name]


def verify_iteration_identities(model, trace, y, eta=0.0, q=None, delta=0.0,
                                known_solution=None, probe=None, tol=1e-10):
    """Check the algebraic identities and inequalities satisfied by a run.

    For every index k at which a step was taken, with ``A = F'(w_k)`` and
    ``D = F(w_k) + A (x_{k+1} - w_k) - y``:

    * ``extrapolation``: |w_k - p|^2 = (1+a)|x_k - p|^2 - a|x_{k-1} - p|^2
      + a(1+a)|x_k - x_{k-1}|^2 for a probe vector p (k >= 1);
    * ``dk_formula``: (A A* + lam I) D = lam (F(w_k) - y);
    * ``step_formula``: w_k - x_{k+1} = A* D / lam;
    * ``dk_bounds`` (needs `q`): q |F(w_k)-y| <= |D| <= |F(w_k)-y|;
    * ``residual_growth``: (1-eta)|F(x_{k+1})-y| <= (1+eta)|F(w_k)-y|;
    * ``gain`` (needs `known_solution` and `q`):
      |w_k-x*|^2 - |x_{k+1}-x*|^2 >= |w_k-x_{k+1}|^2
      + 2 D_norm ((q-eta)|F(w_k)-y| - (eta+1) delta) / lam.

    Identities are relative to `tol`; inequalities allow a slack of
    ``-tol * scale``. The step formulas only hold for inner solves run to
    tolerance; a truncated trace sets `mode_mismatch`.
    """
    if trace.xs is None or trace.ws is None:
        raise ValueError('trace was recorded without iterates')
    y = as_vector(y, model.range_dim, 'y')
    report = IdentityReport(mode_mismatch=trace.cg_mode != TO_TOLERANCE)
    if probe is None:
        probe = known_solution if known_solution is not None else np.zeros(model.domain_dim)
    probe = as_vector(probe, model.domain_dim, 'probe')
    xs, ws = trace.xs, trace.ws

    def add(k, name, value, ok):
        report.checks.append(IdentityCheck(k, name, float(value), bool(ok)))

    for rec in trace.records:
        k = rec.k
        if rec.cg_report is None:
            continue
        lam = rec.lambda_k
        w, x_next = ws[k], xs[k + 1]
        if k >= 1:
            a = trace.records[k].alpha_k
            xk, xkm1 = xs[k], xs[k - 1]
            terms = [(1 + a) * norm(xk - probe) ** 2, a * norm(xkm1 - probe) ** 2,
                     a * (1 + a) * norm(xk - xkm1) ** 2]
            lhs = norm(w - probe) ** 2
            err = abs(lhs - (terms[0] - terms[1] + terms[2])) / max(max(terms), lhs, 1e-300)
            add(k, 'extrapolation', err, err <= tol)

        fw, deriv = model.linearize(w)
        res = fw - y
        res_norm = norm(res)
        step = x_next - w
        dk = res + deriv(step)
        dk_norm = norm(dk)

        lhs = deriv(deriv.adjoint(dk)) + lam * dk
        err = norm(lhs - lam * res) / max(lam * res_norm, 1e-300)
        add(k, 'dk_formula', err, err <= tol)

        rhs = deriv.adjoint(dk) / lam
        err = norm(-step - rhs) / max(norm(step), norm(rhs), 1e-300)
        add(k, 'step_formula', err, err <= tol)

        slack = tol * max(res_norm, 1e-300)
        if q is not None:
            ok = q * res_norm - slack <= dk_norm <= res_norm + slack
            add(k, 'dk_bounds', dk_norm / max(res_norm, 1e-300), ok)

        next_res = norm(model.apply(x_next) - y)
        margin = (1 + eta) * res_norm - (1 - eta) * next_res
        add(k, 'residual_growth', margin, margin >= -slack)

        if known_solution is not None and q is not None:
            xs_ = known_solution
            gain = norm(w - xs_) ** 2 - norm(x_next - xs_) ** 2
            bound = norm(w - x_next) ** 2 + 2 * dk_norm * (
                (q - eta) * res_norm - (eta + 1) * delta) / lam
            scale = max(norm(w - xs_) ** 2, abs(bound), 1e-300)
            add(k, 'gain', gain - bound, gain - bound >= -tol * scale)
    return report
