import json
import math
import os

import numpy as np
import pytest

from inlm import cli
from inlm.export import canonical_json, config_hash, fmt, read_trace_csv
from inlm.pde import read_grid_csv
from inlm.verify import format_table, run_suites


def run(argv):
    return cli.main([str(a) for a in argv])


def read_bytes(folder):
    return {name: (folder / name).read_bytes() for name in sorted(os.listdir(folder))}


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, 12345.678901234567):
        assert float(fmt(v)) == v
    assert fmt(3) == '3'
    assert fmt(math.nan) == ''


def test_config_hash_canonical():
    a = {'b': 1.0, 'a': [0.1, 0.2], 'c': math.inf}
    b = {'c': math.inf, 'a': (0.1, 0.2), 'b': 1.0}
    assert config_hash(a) == config_hash(b)
    assert canonical_json(a) == '{"a":[0.1,0.2],"b":1.0,"c":null}'
    assert config_hash(a) != config_hash({'b': 1.0, 'a': [0.1, 0.2000001], 'c': None})


def test_pde_baseline(tmp_path):
    assert run(['pde', '--n', 16, '--noise', 0, '--alpha', 0, '--iters', 10, '--out', tmp_path]) == 0
    cols = read_trace_csv(tmp_path / 'trace_alpha0.csv')
    assert list(cols) == ['k', 'alpha_k', 'lambda_k', 'residual', 'distance', 'step_norm']
    assert list(cols['k']) == list(range(10))
    assert np.all(cols['alpha_k'] == 0)
    assert read_grid_csv(tmp_path / 'recon_final_alpha0.csv').shape == (16, 16)
    summary = json.loads((tmp_path / 'summary.json').read_text())
    assert summary['runs'][0]['stop_reason'] == 'max_iters'
    assert summary['runs'][0]['wall_time'] is None


def test_pde_sweep_is_deterministic(tmp_path):
    argv = ['pde', '--n', 8, '--noise', 0.01, '--alpha-sweep', '0,0.5,1.0', '--tau', 1,
            '--lambda', 2, '--iters', 15, '--seed', 7]
    assert run(argv + ['--out', tmp_path / 'a']) == 0
    assert run(argv + ['--out', tmp_path / 'b', '--workers', 2]) == 0
    a, b = read_bytes(tmp_path / 'a'), read_bytes(tmp_path / 'b')
    assert a == b
    assert sum(name.startswith('trace_') for name in a) == 3
    summary = json.loads(a['summary.json'])
    assert [r['alpha'] for r in summary['runs']] == [0.0, 0.5, 1.0]


def test_pde_stop_flag(tmp_path):
    assert run(['pde', '--n', 8, '--noise', 0.05, '--alpha', 0.3, '--tau', 1.5, '--stop',
                '--out', tmp_path]) == 0
    run_ = json.loads((tmp_path / 'summary.json').read_text())['runs'][0]
    assert run_['stop_reason'] == 'discrepancy'
    assert run_['k_star'] == run_['morozov_index'] == run_['iterations'] - 1


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUTPUT_DIR, str(tmp_path / 'env'))
    assert run(['pde', '--n', 4, '--iters', 2]) == 0
    assert (tmp_path / 'env' / 'summary.json').exists()
    assert run(['pde', '--n', 4, '--iters', 2, '--out', tmp_path / 'flag']) == 0
    assert (tmp_path / 'flag' / 'summary.json').exists()


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / 'c.json'
    cfg.write_text(json.dumps({'n': 6, 'iters': 3, 'alphas': [0.2, 0.4], 'noise': 0.0}))
    assert run(['pde', '--config', cfg, '--iters', 4, '--out', tmp_path / 'o']) == 0
    summary = json.loads((tmp_path / 'o' / 'summary.json').read_text())
    assert summary['config']['n'] == 6
    assert summary['config']['iters'] == 4
    assert [r['iterations'] for r in summary['runs']] == [4, 4]


def test_config_file_unknown_key(tmp_path, capsys):
    cfg = tmp_path / 'c.json'
    cfg.write_text(json.dumps({'grid': 6}))
    assert run(['pde', '--config', cfg, '--out', tmp_path]) == 2
    assert 'grid' in capsys.readouterr().err


@pytest.mark.parametrize('argv', [
    ['pde', '--n', 3],
    ['pde', '--alpha', 1.5],
    ['pde', '--alpha-mode', 'theory', '--alpha', 1.0],
    ['pde', '--lambda', -1],
    ['nn', '--train', 0],
    ['nn', '--csv', 'x.csv'],
])
def test_invalid_values_exit_2(argv, tmp_path):
    assert run(argv + ['--out', tmp_path]) == 2


@pytest.mark.parametrize('argv', [
    ['pde', '--n', 'eight'],
    ['pde', '--alpha', 0.1, '--alpha-sweep', '0,0.2'],
    ['nn', '--bogus'],
    ['frobnicate'],
])
def test_invalid_flags_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        run(argv)
    assert exc.value.code == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    missing = tmp_path / 'nope.csv'
    assert run(['nn', '--csv', missing, '--target-column', 0, '--out', tmp_path]) == 1
    assert 'nope.csv' in capsys.readouterr().err


def test_csv_error_names_row(tmp_path, capsys):
    f = tmp_path / 'd.csv'
    f.write_text('1,2,3\n4,oops,6\n1,1,1\n')
    assert run(['nn', '--csv', f, '--target-column', 2, '--train', 2, '--test', 1,
                '--out', tmp_path / 'o']) == 1
    assert 'row 1' in capsys.readouterr().err


def test_nn_synthetic(tmp_path):
    argv = ['nn', '--synthetic', '--train', 500, '--test', 50, '--alpha', 0.05, '--epochs', 10,
            '--cg-iters', 3, '--seed', 3]
    assert run(argv + ['--out', tmp_path / 'a']) == 0
    assert run(argv + ['--out', tmp_path / 'b']) == 0
    assert read_bytes(tmp_path / 'a') == read_bytes(tmp_path / 'b')
    rel = read_trace_csv(tmp_path / 'a' / 'relres_alpha0.05.csv')
    assert list(rel['epoch']) == list(range(11)) and rel['relative_residual'][0] == 1.0
    err = read_trace_csv(tmp_path / 'a' / 'prederr_alpha0.05.csv')
    assert len(err['sample']) == 50
    summary = json.loads((tmp_path / 'a' / 'summary.json').read_text())
    run_ = summary['runs'][0]
    assert run_['performance'] == pytest.approx(1 - np.mean(err['relative_error']), abs=1e-15)
    assert summary['lambda'] == 5.0


def test_nn_default_sweep_and_noiseless_fit(tmp_path):
    assert run(['nn', '--synthetic', '--train', 10000, '--test', 100, '--noise', 0,
                '--out', tmp_path]) == 0
    summary = json.loads((tmp_path / 'summary.json').read_text())
    assert [r['alpha'] for r in summary['runs']] == [0.0, 0.05, 0.1, 0.2]
    assert all(r['final_relative_residual'] <= 1e-6 for r in summary['runs'])


def test_nn_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (60, 4))
    y = X @ np.array([0.5, -0.2, 0.1, 0.3]) + 2.0
    data = np.column_stack([X[:, :2], rng.random(60), X[:, 2:], y])
    f = tmp_path / 'd.csv'
    np.savetxt(f, data, delimiter=',', header='a,b,junk,c,d,y', comments='')
    assert run(['nn', '--csv', f, '--target-column', 5, '--exclude-columns', 2, '--train', 50,
                '--test', 10, '--alpha', 0.1, '--lambda', 0.5, '--out', tmp_path / 'o']) == 0
    summary = json.loads((tmp_path / 'o' / 'summary.json').read_text())
    assert summary['runs'][0]['final_distance'] is None
    assert summary['runs'][0]['performance'] > 0.99


def test_verify_default_passes(capsys):
    assert run(['verify']) == 0
    out = capsys.readouterr().out
    assert 'FAIL' not in out and 'adjoint' in out and 'kstar' in out


def test_verify_filter(capsys):
    assert run(['verify', '--suite', 'lemma', '--problem', 'scalar']) == 0
    lines = capsys.readouterr().out.splitlines()[1:-1]
    assert lines and all(line.startswith('lemma') for line in lines)


def test_verify_failure_exit_1(monkeypatch):
    from inlm import verify
    from inlm.verify import CheckResult

    monkeypatch.setitem(verify.SUITES, 'cg', lambda problems: [
        CheckResult('cg', 'scalar', 'forced', 1.0, 0.0, False)])
    assert run(['verify', '--suite', 'cg']) == 1


def test_verify_table_format():
    results = run_suites(['wtcc'])
    table = format_table(results)
    assert table.splitlines()[0].split()[:2] == ['suite', 'problem']
    assert 'PASS' in table
