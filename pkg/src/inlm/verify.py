"""Property suites run by ``inlm verify``.

Each suite returns a list of :class:`CheckResult`. The instances are small
and seeded so a full pass takes a few seconds.
"""

import math
from dataclasses import dataclass

import numpy as np

from .krylov import CgConfig, cg_normal_solve
from .linops import LinearModel, check_adjoint, check_jacobian_fd, norm
from .nn import SatLin, check_scalar_wtcc, synth_dataset
from .pde import EllipticProblem
from .solver import (AlphaSchedule, LambdaSchedule, SolverConfig, kstar_bound,
                     run_exact, run_noisy, verify_iteration_identities)

__all__ = ['CheckResult', 'SUITES', 'PROBLEMS', 'scalar_problem', 'run_suites', 'format_table']

PROBLEMS = ('scalar', 'pde', 'nn')


@dataclass(frozen=True)
class CheckResult:
    suite: str
    problem: str
    name: str
    value: float
    threshold: float
    passed: bool


def scalar_problem():
    """``F(x) = 2x`` with exact data ``y = 2`` and solution ``x* = 1``."""
    return LinearModel([[2.0]]), np.array([2.0]), np.array([1.0])


def _le(suite, problem, name, value, threshold):
    return CheckResult(suite, problem, name, float(value), threshold, bool(value <= threshold))


def _linear_nn(seed, n_train=200):
    prob, truth = synth_dataset(n_train, 20, noise_pct=0.0, seed=seed)
    return prob, truth


def suite_adjoint(problems):
    out = []
    if 'scalar' in problems:
        rng = np.random.default_rng(1)
        model = LinearModel(rng.standard_normal((6, 4)))
        out.append(_le('adjoint', 'scalar', 'linear 6x4',
                       check_adjoint(model, np.zeros(4), 100, 2), 1e-12))
    if 'pde' in problems:
        for n in (4, 8, 16):
            rng = np.random.default_rng(n)
            prob = EllipticProblem(n, rng.random(n * n) * 100)
            c = rng.random(n * n) * 10
            out.append(_le('adjoint', 'pde', 'n={}'.format(n),
                           check_adjoint(prob, c, 100, n + 1), 1e-10))
    if 'nn' in problems:
        prob, _ = synth_dataset(500, 10, seed=4)
        p = np.random.default_rng(5).uniform(-12, 12, prob.domain_dim)
        out.append(_le('adjoint', 'nn', 'random params', check_adjoint(prob, p, 100, 6), 1e-10))
    return out


def suite_fd(problems):
    out = []
    if 'scalar' in problems:
        model = LinearModel(np.arange(6.0).reshape(3, 2), offset=[1.0, -1.0, 0.5])
        errs = check_jacobian_fd(model, np.array([0.3, -0.7]), np.array([1.0, 2.0]), [1e-1, 1e-4])
        out.append(_le('fd', 'scalar', 'affine', max(errs), 1e-10))
    if 'pde' in problems:
        rng = np.random.default_rng(8)
        prob = EllipticProblem(8, rng.random(64) * 100)
        c = rng.random(64) * 10
        err = check_jacobian_fd(prob, c, rng.standard_normal(64), [1e-6])[0]
        out.append(_le('fd', 'pde', 'n=8 t=1e-6', err, 1e-5))
    if 'nn' in problems:
        prob, truth = _linear_nn(9)
        h = np.random.default_rng(10).standard_normal(prob.domain_dim)
        errs = check_jacobian_fd(prob, truth, h, [1e-3, 1e-6])
        out.append(_le('fd', 'nn', 'linear region', max(errs), 1e-9))
    return out


def suite_cg(problems):
    out = []
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        m, d = rng.integers(1, 17, size=2)
        M = rng.standard_normal((m, d))
        lam = float(rng.uniform(0.1, 2.0))
        r = rng.standard_normal(m)
        step, _ = cg_normal_solve(LinearModel(M), np.zeros(d), r, lam, CgConfig.exact(1e-12))
        ref = np.linalg.solve(M.T @ M + lam * np.eye(d), M.T @ r)
        worst = max(worst, norm(step - ref) / max(norm(ref), 1e-300))
    out.append(_le('cg', 'scalar', '20 dense oracles', worst, 1e-8))
    return out


def suite_lemma(problems):
    out = []
    if 'scalar' not in problems:
        return out
    model, y, x_star = scalar_problem()
    for alpha in (0.0, 0.3, 0.9):
        cfg = SolverConfig(alpha=AlphaSchedule.constant(alpha), lam=LambdaSchedule.constant(100.0),
                           cg=CgConfig.exact(1e-14), max_outer_iters=50, exact_zero_tol=0.0)
        _, trace = run_exact(model, y, np.zeros(1), cfg, store_iterates=True)
        rep = verify_iteration_identities(model, trace, y, eta=0.0, q=0.9,
                                          known_solution=x_star, probe=np.array([3.7]))
        for name in ('extrapolation', 'dk_formula', 'step_formula', 'dk_bounds',
                     'residual_growth', 'gain'):
            checks = rep.by_name(name)
            out.append(CheckResult('lemma', 'scalar', '{} alpha={}'.format(name, alpha),
                                   float(len([c for c in checks if not c.passed])), 0.0,
                                   bool(checks) and all(c.passed for c in checks)))
    return out


def suite_monotone(problems):
    out = []
    if 'scalar' in problems:
        model, y, x_star = scalar_problem()
        delta = 0.05
        cfg = SolverConfig(alpha=AlphaSchedule.theory(0.5, rho=2.5), lam=LambdaSchedule.constant(5.0),
                           tau=2.5, delta=delta, cg=CgConfig.exact(1e-14), max_outer_iters=500,
                           eta=0.0, q=0.5, C=2.0)
        _, trace = run_noisy(model, y + delta, np.zeros(1), cfg, store_iterates=True)
        worst = max(norm(trace.xs[k + 1] - x_star) - norm(trace.ws[k] - x_star)
                    for k in range(trace.k_star))
        out.append(_le('monotone', 'scalar', 'x_{k+1} vs w_k', worst, 1e-12))
    if 'nn' in problems:
        prob, truth = _linear_nn(12)
        rng = np.random.default_rng(13)
        e = rng.standard_normal(prob.n_train)
        delta = 0.01 * norm(prob.train_targets)
        y_delta = prob.train_targets + delta * e / norm(e)
        x0 = truth + 0.05 * rng.uniform(-1, 1, prob.domain_dim)
        cfg = SolverConfig(alpha=AlphaSchedule.theory(0.3, rho=1.0), lam=LambdaSchedule.constant(50.0),
                           tau=2.5, delta=delta, cg=CgConfig.exact(1e-14), max_outer_iters=200)
        _, trace = run_noisy(prob, y_delta, x0, cfg, store_iterates=True)
        ks = trace.k_star if trace.k_star is not None else len(trace.records)
        worst = max([norm(trace.xs[k + 1] - truth) - norm(trace.ws[k] - truth) for k in range(ks)]
                    or [0.0])
        out.append(_le('monotone', 'nn', 'linear region', worst, 1e-12))
    return out


def suite_wtcc(problems):
    act = SatLin(2.0 / 3.0, 8.0)
    ratio = check_scalar_wtcc(act, trials=10 ** 6, seed=14)
    return [_le('wtcc', 'nn', 'a=2/3, 1e6 pairs', ratio, 0.5 + 1e-12)]


def kstar_instances(seed=0, count=10):
    """Seeded (delta, lambda) pairs on the scalar model; lambda exceeds q C^2/(1-q) = 4."""
    rng = np.random.default_rng(seed)
    deltas = rng.uniform(0.005, 0.2, count)
    lams = rng.uniform(4.5, 50.0, count)
    return [(float(d), float(lam)) for d, lam in zip(deltas, lams)]


def suite_kstar(problems):
    model, y, _ = scalar_problem()
    q, eta, tau, rho = 0.5, 0.0, 2.5, 2.5
    out = []
    for delta, lam in kstar_instances():
        cfg = SolverConfig(alpha=AlphaSchedule.theory(0.9, rho=rho), lam=LambdaSchedule.constant(lam),
                           tau=tau, delta=delta, cg=CgConfig.exact(1e-14), max_outer_iters=100000,
                           eta=eta, q=q, C=2.0)
        _, trace = run_noisy(model, y + delta, np.zeros(1), cfg)
        bound = kstar_bound(lam, q, tau, delta, eta, rho, cfg.alpha.theta.total)
        observed = trace.k_star if trace.k_star is not None else math.inf
        out.append(_le('kstar', 'scalar', 'delta={:.4g} lambda={:.4g}'.format(delta, lam), observed, bound))
    return out


SUITES = {
    'adjoint': suite_adjoint,
    'fd': suite_fd,
    'cg': suite_cg,
    'lemma': suite_lemma,
    'monotone': suite_monotone,
    'wtcc': suite_wtcc,
    'kstar': suite_kstar,
}


def run_suites(suites=None, problems=None):
    suites = list(SUITES) if not suites else suites
    problems = PROBLEMS if not problems else tuple(problems)
    results = []
    for name in suites:
        if name not in SUITES:
            raise KeyError('unknown suite {!r}'.format(name))
        results.extend(SUITES[name](problems))
    return results


def format_table(results):
    lines = ['{:<9} {:<7} {:<34} {:>12} {:>12}  {}'.format(
        'suite', 'problem', 'check', 'value', 'threshold', 'result')]
    for r in results:
        lines.append('{:<9} {:<7} {:<34} {:>12.4g} {:>12.4g}  {}'.format(
            r.suite, r.problem, r.name, r.value, r.threshold, 'PASS' if r.passed else 'FAIL'))
    return '\n'.join(lines)
