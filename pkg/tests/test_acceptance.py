"""Acceptance criteria, one test each.

Every test records a line ``[PASS|FAIL] <n>. <title> (<seconds>s): <detail>``;
the lines are printed in the terminal summary (see conftest.py) and by
running this file directly.
"""

import functools
import os
import sys
import time

import numpy as np
import pytest

from inlm import cli
from inlm.export import write_trace_csv
from inlm.krylov import CgConfig
from inlm.linops import LinearModel, norm
from inlm.nn import SatLin, check_scalar_wtcc, performance, synth_dataset
from inlm.pde import add_relative_noise, make_phantom, naive_reconstruction
from inlm.solver import AlphaSchedule, LambdaSchedule, SolverConfig, discrepancy_index, run_noisy
from inlm.verify import suite_adjoint, suite_cg, suite_fd, suite_kstar, suite_lemma

RESULTS = {}

PDE_LAMBDA = 0.01
PDE_SEED = 7
NN_LAMBDA = 1000.0
NN_SEED = 3


def criterion(number, title, budget):
    """Record outcome, detail and wall time; exceeding `budget` seconds fails the criterion."""

    def wrap(func):
        @functools.wraps(func)
        def run(*args, **kwargs):
            start = time.perf_counter()
            detail, ok = '', False
            try:
                detail = func(*args, **kwargs) or ''
                ok = True
            except AssertionError as exc:
                detail = 'assertion failed: {}'.format(str(exc).splitlines()[0] if str(exc) else '')
                raise
            finally:
                elapsed = time.perf_counter() - start
                if ok and elapsed > budget:
                    ok = False
                    detail += ' [over budget {:g}s]'.format(budget)
                RESULTS[number] = '[{}] {:>2}. {} ({:.2f}s): {}'.format(
                    'PASS' if ok else 'FAIL', number, title, elapsed, detail)
            assert elapsed <= budget, 'took {:.2f}s, budget {:g}s'.format(elapsed, budget)

        return run

    return wrap


def pde_run(n, alpha, iters, noise, stop=False, tau=1.0):
    ph = make_phantom(n)
    u_delta, delta = add_relative_noise(ph.u_true, noise, PDE_SEED)
    cfg = SolverConfig(alpha=AlphaSchedule.constant(alpha), lam=LambdaSchedule.constant(PDE_LAMBDA),
                       tau=tau, delta=delta if stop else 0.0, cg=CgConfig.truncated(2),
                       max_outer_iters=iters)
    dist = []
    x, trace = run_noisy(ph.problem, u_delta, np.zeros(n * n), cfg, x_true=ph.c_true,
                         callback=lambda s: dist.append(norm(s.x_cur - ph.c_true)))
    distances = np.concatenate([[norm(ph.c_true)], dist])
    return trace, distances, delta


def assert_lm_degenerate(model, y, x0, iters, cg):
    cfg = SolverConfig(alpha=AlphaSchedule.constant(0.0), lam=LambdaSchedule.constant(1.0),
                       cg=cg, max_outer_iters=iters)
    _, trace = run_noisy(model, y, x0, cfg, store_iterates=True)
    assert len(trace.ws) == iters + 1
    for k, w in enumerate(trace.ws):
        assert w.tobytes() == trace.xs[k].tobytes(), 'w_{} != x_{}'.format(k, k)
    return iters


@criterion(1, 'LM degeneration with alpha = 0', 1.0)
def test_c01_lm_degeneration():
    n_scalar = assert_lm_degenerate(LinearModel([[2.0]]), np.array([2.1]), np.zeros(1), 20,
                                    CgConfig.exact(1e-14))
    ph = make_phantom(8)
    n_pde = assert_lm_degenerate(ph.problem, ph.u_true, np.zeros(64), 10, CgConfig.truncated(2))
    prob, _ = synth_dataset(1000, 0, noise_pct=0.01, seed=NN_SEED)
    n_nn = assert_lm_degenerate(prob, prob.train_targets, np.ones(15), 10, CgConfig.truncated(3))
    return 'w_k == x_k bitwise for {} scalar, {} PDE, {} NN iterates'.format(
        n_scalar + 1, n_pde + 1, n_nn + 1)


def all_pass(results):
    bad = [r for r in results if not r.passed]
    assert not bad, '; '.join('{} {}={:.3g}'.format(r.problem, r.name, r.value) for r in bad)
    return ', '.join('{} {} {:.2g}'.format(r.problem, r.name, r.value) for r in results)


@criterion(2, 'adjoint identity on PDE and NN models', 10.0)
def test_c02_adjoint():
    results = suite_adjoint(('pde', 'nn'))
    assert len(results) == 4
    assert all(r.threshold == 1e-10 for r in results)
    return all_pass(results)


@criterion(3, 'Jacobian finite differences', 10.0)
def test_c03_fd():
    results = suite_fd(('pde', 'nn'))
    assert [(r.problem, r.threshold) for r in results] == [('pde', 1e-5), ('nn', 1e-9)]
    return all_pass(results)


@criterion(4, 'CG normal-equation solve vs dense oracle', 5.0)
def test_c04_cg_oracle():
    return all_pass(suite_cg(('scalar',)))


@criterion(5, 'iteration identities on the scalar model', 5.0)
def test_c05_lemma():
    results = suite_lemma(('scalar',))
    assert len(results) == 18
    all_pass(results)
    return '6 identity/inequality families x alpha in {0, 0.3, 0.9}, 50 iterations each'


@criterion(6, 'discrepancy stop on the scalar model', 1.0)
def test_c06_discrepancy_stop():
    cfg = SolverConfig(alpha=AlphaSchedule.constant(0.0), lam=LambdaSchedule.constant(1.0),
                       tau=1.0, delta=0.1, cg=CgConfig.exact(1e-14))
    x, trace = run_noisy(LinearModel([[2.0]]), np.array([2.1]), np.zeros(1), cfg)
    assert trace.k_star == 2
    assert abs(trace.final_residual - 0.084) <= 1e-12
    assert trace.final_residual <= 0.1
    return 'k*={}, residual={:.12g}, x={:.12g}'.format(trace.k_star, trace.final_residual, x[0])


@criterion(7, 'stopping index within the a-priori bound', 5.0)
def test_c07_kstar():
    results = suite_kstar(('scalar',))
    assert len(results) == 10
    all_pass(results)
    return 'max k*/bound = {:.3g}'.format(max(r.value / r.threshold for r in results))


@criterion(8, 'semi-convergence on the PDE problem (n=32, 1% noise)', 60.0)
def test_c08_semiconvergence():
    iters = 200
    out = {}
    for alpha in (0.0, 0.6):
        trace, dist, delta = pde_run(32, alpha, iters, 0.01)
        best = int(np.argmin(dist))
        assert 0 < best < iters, 'alpha={}: no interior minimum (argmin {})'.format(alpha, best)
        assert dist[-1] > dist[best], 'alpha={}: distance does not increase'.format(alpha)
        kstar = discrepancy_index(trace, 1.0 * delta)
        assert kstar is not None, 'alpha={}: discrepancy never reached'.format(alpha)
        out[alpha] = (best, kstar, dist[best], dist[-1])
    assert out[0.6][0] <= out[0.0][0]
    return '; '.join('alpha={}: argmin dist k={} (|e|={:.4g}, final {:.4g}), k*={}'.format(
        a, b, d, f, k) for a, (b, k, d, f) in out.items())


@criterion(9, 'noiseless PDE convergence is faster with inertia', 60.0)
def test_c09_noiseless():
    res = {}
    for alpha in (0.0, 0.6):
        trace, _, _ = pde_run(32, alpha, 100, 0.0)
        res[alpha] = trace.final_residual
    assert res[0.6] <= res[0.0]
    return 'residual after 100 iterations: alpha=0 {:.4g}, alpha=0.6 {:.4g}'.format(res[0.0], res[0.6])


@criterion(10, 'naive pointwise division', 10.0)
def test_c10_naive_division():
    n = 32
    ph = make_phantom(n)
    tol = ph.problem.solve_tol
    exact = norm(naive_reconstruction(n, ph.u_true, ph.g_grid) - ph.c_true) / norm(ph.c_true)
    u_delta, _ = add_relative_noise(ph.u_true, 0.01, PDE_SEED)
    noisy = norm(naive_reconstruction(n, u_delta, ph.g_grid) - ph.c_true) / norm(ph.c_true)
    assert exact <= 10 * tol
    assert noisy > 1
    return 'noiseless rel. error {:.3g} (limit {:.0e}), 1% noise rel. error {:.3g}'.format(
        exact, 10 * tol, noisy)


@criterion(11, 'scalar tangential cone constant of the activation', 5.0)
def test_c11_wtcc():
    ratio = check_scalar_wtcc(SatLin(2.0 / 3.0, 8.0), trials=10 ** 6, seed=11)
    assert ratio <= 0.5 + 1e-12
    return 'max ratio {:.15g} over 1e6 pairs'.format(ratio)


def nn_experiment(alpha, n_train=10000, n_test=1000):
    prob, _ = synth_dataset(n_train, n_test, noise_pct=0.01, seed=NN_SEED)
    x0 = np.random.default_rng(NN_SEED + 1000).uniform(-1.0, 1.0, prob.domain_dim)
    cfg = SolverConfig(alpha=AlphaSchedule.constant(alpha), lam=LambdaSchedule.constant(NN_LAMBDA),
                       cg=CgConfig.truncated(3), max_outer_iters=10)
    params, trace = run_noisy(prob, prob.train_targets, x0, cfg)
    return performance(prob, params), cli.relative_residuals(trace)


@criterion(12, 'desk-scale network training (10k/1k, 1% noise)', 60.0)
def test_c12_nn_training():
    perf0, rel0 = nn_experiment(0.0)
    perf, rel = nn_experiment(0.05)
    assert len(rel) == 11
    assert perf >= 0.90
    assert rel[6] <= rel0[6]
    return 'performance alpha=0.05 {:.4f} (alpha=0 {:.4f}); rel. residual at epoch 6: {:.4g} vs {:.4g}'.format(
        perf, perf0, rel[6], rel0[6])


def snapshot(folder):
    return {name: open(os.path.join(folder, name), 'rb').read() for name in sorted(os.listdir(folder))}


@criterion(13, 'byte-identical outputs for repeated runs', 60.0)
def test_c13_determinism(tmp_path):
    jobs = {
        'pde': ['pde', '--n', '32', '--noise', '0.01', '--alpha-sweep', '0,0.6', '--tau', '1',
                '--lambda', str(PDE_LAMBDA), '--cg-iters', '2', '--iters', '60', '--seed', str(PDE_SEED)],
        'nn': ['nn', '--synthetic', '--train', '10000', '--test', '1000', '--alpha-sweep', '0,0.05',
               '--lambda', str(NN_LAMBDA), '--epochs', '10', '--cg-iters', '3', '--seed', str(NN_SEED)],
    }
    files = 0
    for name, argv in jobs.items():
        snaps = []
        for rep in range(2):
            out = tmp_path / '{}{}'.format(name, rep)
            assert cli.main(argv + ['--out', str(out)]) == 0
            snaps.append(snapshot(out))
        assert snaps[0] == snaps[1], '{} outputs differ'.format(name)
        files += len(snaps[0])
    traces = []
    for rep in range(2):
        cfg = SolverConfig(alpha=AlphaSchedule.theory(0.9, rho=2.5), lam=LambdaSchedule.constant(5.0),
                           tau=2.5, delta=0.05, cg=CgConfig.exact(1e-14))
        _, trace = run_noisy(LinearModel([[2.0]]), np.array([2.05]), np.zeros(1), cfg)
        path = tmp_path / 'scalar{}.csv'.format(rep)
        write_trace_csv(path, trace)
        traces.append(path.read_bytes())
    assert traces[0] == traces[1]
    return '{} CLI output files (pde, nn) and the scalar trace identical across two runs'.format(files)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-q']))
