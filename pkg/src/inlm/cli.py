"""Command-line harness: ``inlm pde``, ``inlm nn`` and ``inlm verify``.

Exit codes: 0 on success, 1 on a runtime failure or a failed check, 2 on
invalid flags. The output directory is ``--out``, else ``$INLM_OUTPUT_DIR``,
else the config file's ``output_dir``, else ``inlm-out``.
"""

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .export import config_hash, write_json, write_series_csv, write_trace_csv
from .krylov import CgConfig
from .linops import norm
from .nn import ALPHA_PRESETS, DatasetError, load_csv_dataset, performance, prediction_errors, \
    synth_dataset
from .pde import add_relative_noise, make_phantom, write_grid_csv
from .solver import (CONSTANT, THEORY, AlphaSchedule, LambdaSchedule, SolverConfig,
                     discrepancy_index, run_noisy)
from .verify import PROBLEMS, SUITES, format_table, run_suites

log = logging.getLogger('inlm')

ENV_OUTPUT_DIR = 'INLM_OUTPUT_DIR'
DEFAULT_OUTPUT_DIR = 'inlm-out'


class UsageError(ValueError):
    """Flag or config values that parse but are not admissible."""


@dataclass
class PdeConfig:
    n: int = 32
    noise: float = 0.01
    alphas: tuple = (0.0,)
    alpha_mode: str = CONSTANT
    rho: float = math.inf
    tau: float = 1.0
    lam: float = 0.01
    cg_iters: int = 2
    iters: int = 200
    seed: int = 7
    stop: bool = False
    blur_std: float = 0.05
    output_dir: str = ''


@dataclass
class NnConfig:
    synthetic: bool = True
    csv: str = ''
    target_column: int = -1
    exclude_columns: tuple = ()
    test_scale: str = 'train'
    train: int = 10000
    test: int = 1000
    input_dim: int = 14
    noise: float = 0.01
    alphas: tuple = (0.0,) + ALPHA_PRESETS
    lam: float = math.nan
    epochs: int = 10
    cg_iters: int = 3
    seed: int = 3
    output_dir: str = ''


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError('expected comma-separated numbers, got {!r}'.format(text))


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError('expected comma-separated integers, got {!r}'.format(text))


def _alpha_label(alpha):
    return format(alpha, 'g')


def _hashable_config(cfg):
    d = asdict(cfg)
    d.pop('output_dir', None)
    return d


def resolve_output_dir(flag_value, file_value):
    if flag_value:
        return flag_value
    env = os.environ.get(ENV_OUTPUT_DIR)
    if env:
        return env
    return file_value or DEFAULT_OUTPUT_DIR


def build_config(cls, args, renames):
    """Defaults, then the JSON config file, then explicitly given flags."""
    values = {}
    if getattr(args, 'config', None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise UsageError('config file must hold a JSON object')
        known = {f.name for f in fields(cls)}
        unknown = set(loaded) - known
        if unknown:
            raise UsageError('unknown config keys: {}'.format(', '.join(sorted(unknown))))
        values.update(loaded)
    for dest, key in renames.items():
        if hasattr(args, dest):
            values[key] = getattr(args, dest)
    for key in ('alphas', 'exclude_columns'):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    if 'rho' in values and values['rho'] is None:
        values['rho'] = math.inf
    cfg = cls(**values)
    cfg.output_dir = resolve_output_dir(getattr(args, 'out', None), values.get('output_dir'))
    return cfg


def _map_runs(func, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [func(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, *zip(*jobs)))


# ---------------------------------------------------------------- pde

def check_pde_config(cfg):
    if cfg.n < 4:
        raise UsageError('--n must be at least 4')
    if cfg.noise < 0:
        raise UsageError('--noise must be nonnegative')
    if not cfg.alphas:
        raise UsageError('no alpha values given')
    if cfg.alpha_mode not in (CONSTANT, THEORY):
        raise UsageError('--alpha-mode must be constant or theory')
    hi_ok = (lambda a: a < 1) if cfg.alpha_mode == THEORY else (lambda a: a <= 1)
    if any(not (0 <= a and hi_ok(a)) for a in cfg.alphas):
        raise UsageError('alpha values must lie in [0, 1] ([0, 1) in theory mode)')
    if not (cfg.lam > 0 and cfg.tau > 0 and cfg.rho > 0):
        raise UsageError('--lambda, --tau and --rho must be positive')
    if cfg.cg_iters < 1 or cfg.iters < 1:
        raise UsageError('--cg-iters and --iters must be positive')


def _alpha_schedule(cfg, alpha):
    if cfg.alpha_mode == THEORY:
        return AlphaSchedule.theory(alpha, rho=cfg.rho)
    return AlphaSchedule.constant(alpha)


def pde_data(cfg):
    phantom = make_phantom(cfg.n, blur_std=cfg.blur_std)
    u_delta, delta = add_relative_noise(phantom.u_true, cfg.noise, cfg.seed)
    return phantom, u_delta, delta


def run_pde_alpha(cfg, alpha, timing=False):
    """One sweep entry: run, write its files, return its summary."""
    start = time.perf_counter()
    phantom, u_delta, delta = pde_data(cfg)
    prob, c_true = phantom.problem, phantom.c_true
    solver_cfg = SolverConfig(
        alpha=_alpha_schedule(cfg, alpha), lam=LambdaSchedule.constant(cfg.lam),
        tau=cfg.tau, delta=delta if cfg.stop else 0.0, cg=CgConfig.truncated(cfg.cg_iters),
        max_outer_iters=cfg.iters)
    x0 = np.zeros(prob.domain_dim)
    best = {'dist': norm(x0 - c_true), 'x': x0.copy(), 'k': 0}

    def track(state):
        d = norm(state.x_cur - c_true)
        if d < best['dist']:
            best.update(dist=d, x=state.x_cur.copy(), k=state.k)

    x_final, trace = run_noisy(prob, u_delta, x0, solver_cfg, x_true=c_true, callback=track)
    label = _alpha_label(alpha)
    out = cfg.output_dir
    write_trace_csv(os.path.join(out, 'trace_alpha{}.csv'.format(label)), trace)
    write_grid_csv(os.path.join(out, 'recon_final_alpha{}.csv'.format(label)), x_final, cfg.n)
    write_grid_csv(os.path.join(out, 'recon_best_alpha{}.csv'.format(label)), best['x'], cfg.n)
    morozov = discrepancy_index(trace, cfg.tau * delta) if delta > 0 else None
    return {
        'alpha': alpha,
        'k_star': trace.k_star if trace.k_star is not None else morozov,
        'morozov_index': morozov,
        'best_distance_index': best['k'],
        'best_distance': best['dist'],
        'stop_reason': trace.stop_reason,
        'iterations': len(trace),
        'final_residual': trace.final_residual,
        'final_distance': norm(x_final - c_true),
        'wall_time': time.perf_counter() - start if timing else None,
    }


def cmd_pde(args):
    cfg = build_config(PdeConfig, args, {
        'n': 'n', 'noise': 'noise', 'alphas': 'alphas', 'alpha_mode': 'alpha_mode',
        'rho': 'rho', 'tau': 'tau', 'lam': 'lam', 'cg_iters': 'cg_iters', 'iters': 'iters',
        'seed': 'seed', 'stop': 'stop'})
    check_pde_config(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    phantom, u_delta, delta = pde_data(cfg)
    out = cfg.output_dir
    write_grid_csv(os.path.join(out, 'phantom_c_true.csv'), phantom.c_true, cfg.n)
    write_grid_csv(os.path.join(out, 'phantom_u_true.csv'), phantom.u_true, cfg.n)
    write_grid_csv(os.path.join(out, 'data_u_delta.csv'), u_delta, cfg.n)
    runs = _map_runs(run_pde_alpha, [(cfg, a, args.timing) for a in cfg.alphas], args.workers)
    summary = {
        'problem': 'pde',
        'config': _hashable_config(cfg),
        'config_hash': config_hash(_hashable_config(cfg)),
        'delta': delta,
        'runs': runs,
    }
    write_json(os.path.join(out, 'summary.json'), summary)
    for r in runs:
        print('alpha={:<5} k*={} best k={} dist={:.6g} residual={:.6g}'.format(
            _alpha_label(r['alpha']), r['k_star'], r['best_distance_index'],
            r['best_distance'], r['final_residual']))
    return 0


# ---------------------------------------------------------------- nn

def check_nn_config(cfg):
    if not cfg.csv and not cfg.synthetic:
        raise UsageError('give --synthetic or --csv')
    if cfg.csv and cfg.target_column < 0:
        raise UsageError('--target-column is required with --csv')
    if cfg.train < 1 or cfg.test < 1:
        raise UsageError('--train and --test must be positive')
    if cfg.noise < 0:
        raise UsageError('--noise must be nonnegative')
    if not cfg.alphas or any(not 0 <= a <= 1 for a in cfg.alphas):
        raise UsageError('alpha values must lie in [0, 1]')
    if cfg.epochs < 1 or cfg.cg_iters < 1:
        raise UsageError('--epochs and --cg-iters must be positive')
    if cfg.test_scale not in ('train', 'own'):
        raise UsageError("--test-scale must be 'train' or 'own'")
    if not (math.isnan(cfg.lam) or cfg.lam > 0):
        raise UsageError('--lambda must be positive')


def nn_data(cfg):
    if cfg.csv:
        prob = load_csv_dataset(cfg.csv, cfg.target_column, cfg.exclude_columns,
                                n_train=cfg.train, n_test=cfg.test, test_scale=cfg.test_scale)
        truth = None
    else:
        prob, truth = synth_dataset(cfg.train, cfg.test, input_dim=cfg.input_dim,
                                    noise_pct=cfg.noise, seed=cfg.seed)
    x0 = np.random.default_rng(cfg.seed + 1000).uniform(-1.0, 1.0, prob.domain_dim)
    return prob, truth, x0


def nn_lambda(cfg):
    return 0.01 * cfg.train if math.isnan(cfg.lam) else cfg.lam


def run_nn_alpha(cfg, alpha, timing=False):
    start = time.perf_counter()
    prob, truth, x0 = nn_data(cfg)
    solver_cfg = SolverConfig(
        alpha=AlphaSchedule.constant(alpha), lam=LambdaSchedule.constant(nn_lambda(cfg)),
        cg=CgConfig.truncated(cfg.cg_iters), max_outer_iters=cfg.epochs)
    y = prob.train_targets
    params, trace = run_noisy(prob, y, x0, solver_cfg, x_true=truth)
    rel = relative_residuals(trace)
    label = _alpha_label(alpha)
    out = cfg.output_dir
    write_trace_csv(os.path.join(out, 'trace_alpha{}.csv'.format(label)), trace)
    write_series_csv(os.path.join(out, 'relres_alpha{}.csv'.format(label)),
                     ('epoch', 'relative_residual'), list(enumerate(rel)))
    errs = prediction_errors(prob, params)
    write_series_csv(os.path.join(out, 'prederr_alpha{}.csv'.format(label)),
                     ('sample', 'relative_error'), list(enumerate(errs)))
    return {
        'alpha': alpha,
        'performance': performance(prob, params),
        'final_relative_residual': rel[-1],
        'stop_reason': trace.stop_reason,
        'k_star': trace.k_star,
        'final_residual': trace.final_residual,
        'final_distance': norm(params - truth) if truth is not None else None,
        'wall_time': time.perf_counter() - start if timing else None,
    }


def relative_residuals(trace):
    """Residual at w_k for every recorded k, then at the returned iterate, over the first."""
    res = list(trace.column('residual_norm'))
    if trace.stop_reason != 'discrepancy' and trace.stop_reason != 'exact_fit':
        res.append(trace.final_residual)
    first = res[0]
    return [r / first if first > 0 else 0.0 for r in res]


def cmd_nn(args):
    cfg = build_config(NnConfig, args, {
        'synthetic': 'synthetic', 'csv': 'csv', 'target_column': 'target_column',
        'exclude_columns': 'exclude_columns', 'test_scale': 'test_scale', 'train': 'train',
        'test': 'test', 'noise': 'noise', 'alphas': 'alphas', 'lam': 'lam', 'epochs': 'epochs',
        'cg_iters': 'cg_iters', 'seed': 'seed', 'input_dim': 'input_dim'})
    if cfg.csv:
        cfg.synthetic = False
    check_nn_config(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    runs = _map_runs(run_nn_alpha, [(cfg, a, args.timing) for a in cfg.alphas], args.workers)
    summary = {
        'problem': 'nn',
        'config': _hashable_config(cfg),
        'config_hash': config_hash(_hashable_config(cfg)),
        'lambda': nn_lambda(cfg),
        'runs': runs,
    }
    write_json(os.path.join(cfg.output_dir, 'summary.json'), summary)
    for r in runs:
        print('alpha={:<5} performance={:.4f} relres={:.6g}'.format(
            _alpha_label(r['alpha']), r['performance'], r['final_relative_residual']))
    return 0


# ---------------------------------------------------------------- verify

def cmd_verify(args):
    suites = []
    for item in args.suite or ():
        suites.extend(s for s in item.split(',') if s)
    bad = [s for s in suites if s not in SUITES]
    if bad:
        raise UsageError('unknown suite(s): {}'.format(', '.join(bad)))
    problems = args.problem or None
    results = run_suites(suites, problems)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    print('{} checks, {} failed'.format(len(results), len(failed)))
    return 0 if results and not failed else 1


# ---------------------------------------------------------------- parser

def build_parser():
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog='inlm', description='Inertial Levenberg-Marquardt experiments.')
    parser.add_argument('-v', '--verbose', action='store_true', help='log progress to stderr')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p):
        p.add_argument('--config', help='JSON file with configuration values')
        p.add_argument('--out', help='output directory (overrides ${})'.format(ENV_OUTPUT_DIR))
        p.add_argument('--workers', type=int, default=1, help='parallel sweep entries')
        p.add_argument('--timing', action='store_true',
                       help='record wall time in the summary (outputs are then not reproducible)')
        p.add_argument('--seed', type=int, default=S)
        p.add_argument('--noise', type=float, default=S, help='relative noise level, e.g. 0.01')
        p.add_argument('--cg-iters', dest='cg_iters', type=int, default=S)
        p.add_argument('--lambda', dest='lam', type=float, default=S)
        alpha = p.add_mutually_exclusive_group()
        alpha.add_argument('--alpha', dest='alphas', type=lambda t: (float(t),), default=S)
        alpha.add_argument('--alpha-sweep', dest='alphas', type=_float_list, default=S)

    p = sub.add_parser('pde', help='coefficient identification on the unit square')
    common(p)
    p.add_argument('--n', type=int, default=S, help='interior nodes per dimension (>= 4)')
    p.add_argument('--alpha-mode', dest='alpha_mode', choices=(CONSTANT, THEORY), default=S)
    p.add_argument('--rho', type=float, default=S, help='ball radius for theory-mode weights')
    p.add_argument('--tau', type=float, default=S)
    p.add_argument('--iters', type=int, default=S)
    p.add_argument('--stop', action='store_const', const=True, default=S,
                   help='stop at the discrepancy index instead of running all iterations')
    p.set_defaults(func=cmd_pde)

    p = sub.add_parser('nn', help='one-layer network training')
    common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument('--synthetic', action='store_const', const=True, default=S)
    src.add_argument('--csv', default=S, help='numeric CSV dataset')
    p.add_argument('--target-column', dest='target_column', type=int, default=S)
    p.add_argument('--exclude-columns', dest='exclude_columns', type=_int_list, default=S)
    p.add_argument('--test-scale', dest='test_scale', choices=('train', 'own'), default=S)
    p.add_argument('--train', type=int, default=S)
    p.add_argument('--test', type=int, default=S)
    p.add_argument('--input-dim', dest='input_dim', type=int, default=S)
    p.add_argument('--epochs', type=int, default=S)
    p.set_defaults(func=cmd_nn)

    p = sub.add_parser('verify', help='run the property suites')
    p.add_argument('--suite', action='append', help='one of {} (repeatable)'.format(', '.join(SUITES)))
    p.add_argument('--problem', action='append', choices=PROBLEMS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    if getattr(args, 'workers', 1) < 1:
        parser.error('--workers must be positive')
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print('inlm: error: {}'.format(exc), file=sys.stderr)
        return 2
    except (OSError, DatasetError, ValueError, ArithmeticError, RuntimeError) as exc:
        print('inlm: error: {}'.format(exc), file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
