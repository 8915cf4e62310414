"""Training a one-layer network with saturated-linear activation as an inverse problem.

The network is ``NN(z; W, b) = sigma(<W, z> + b)`` and the training map
``F(W, b) = [sigma(<W, z_i> + b)]_i`` over the training slice. Parameters
are flattened into one vector ``(W_1, ..., W_d, b)``.

``sigma`` has kinks at ``+-c`` and no derivative there, so the Jacobian
actions use the right derivative ``s(t)`` in place of ``sigma'(t)``.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .linops import ForwardModel, Linearization, as_vector

__all__ = [
    'SatLin', 'NnProblem', 'sigma', 'sigma_rderiv', 'check_scalar_wtcc',
    'nn_forward', 'nn_jacobian_apply', 'nn_adjoint_apply', 'performance',
    'prediction_errors', 'synth_dataset', 'load_csv_dataset', 'DatasetError',
    'ALPHA_PRESETS',
]

log = logging.getLogger(__name__)

ALPHA_PRESETS = (0.05, 0.10, 0.20)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SatLin:
    """Saturated linear activation: slope 1 on (-c, c), slope `a` outside."""

    a: float = 2.0 / 3.0
    c: float = 8.0

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise ValueError('outer slope a must lie in (0, 1)')
        if not self.c > 0:
            raise ValueError('knee c must be positive')

    @property
    def eta(self):
        """Constant of the scalar tangential cone condition, (1-a)/a."""
        return (1.0 - self.a) / self.a


def sigma(act, t):
    t = np.asarray(t, dtype=float)
    a, c = act.a, act.c
    out = np.where(t >= c, c + a * (t - c), t)
    return np.where(t <= -c, -c + a * (t + c), out)


def sigma_rderiv(act, t):
    """Right derivative of sigma: `a` for t >= c or t < -c, else 1."""
    t = np.asarray(t, dtype=float)
    inner_region = (t >= -act.c) & (t < act.c)
    return np.where(inner_region, 1.0, act.a)


def check_scalar_wtcc(act, trials=100000, seed=0, scale=None):
    """Largest ratio ``|sigma(t') - sigma(t) - s(t)(t'-t)| / |sigma(t') - sigma(t)|``.

    Pairs are drawn uniformly from ``[-scale, scale]^2`` (default ``4c``) so
    that every combination of branches is sampled.
    """
    rng = np.random.default_rng(seed)
    scale = 4.0 * act.c if scale is None else scale
    worst = 0.0
    remaining = trials
    while remaining > 0:
        m = min(remaining, 1 << 18)
        t = rng.uniform(-scale, scale, m)
        tp = rng.uniform(-scale, scale, m)
        diff = sigma(act, tp) - sigma(act, t)
        mask = diff != 0
        lin_err = np.abs(diff - sigma_rderiv(act, t) * (tp - t))
        if np.any(mask):
            worst = max(worst, float(np.max(lin_err[mask] / np.abs(diff[mask]))))
        remaining -= m
    return worst


class _NnLinearization(Linearization):
    def __init__(self, model, p, slopes):
        super().__init__(model, p)
        self.slopes = slopes

    def __call__(self, h):
        h = as_vector(h, self.model.domain_dim, 'h')
        return self.slopes * (self.model.train_inputs @ h[:-1] + h[-1])

    def adjoint(self, r):
        r = as_vector(r, self.model.range_dim, 'r')
        sr = self.slopes * r
        return np.append(self.model.train_inputs.T @ sr, np.sum(sr))


class NnProblem(ForwardModel):
    """Samples, targets and split for the training problem.

    Rows ``0..n_train-1`` form the training slice the forward map acts on;
    rows ``n_train..n_train+n_test-1`` are the test slice used by
    :func:`performance`. Inputs are stored already scaled.

    Attributes
    ----------
    samples : ndarray, shape (N, d)
    targets : ndarray, shape (N,)
    n_train, n_test : int
    act : SatLin
    scale_factor : float
        Max training-input norm the raw data were divided by.
    """

    def __init__(self, samples, targets, n_train, n_test, act=None, scale_factor=1.0):
        samples = np.asarray(samples, dtype=float)
        targets = np.asarray(targets, dtype=float)
        if samples.ndim != 2 or targets.shape != (samples.shape[0],):
            raise ValueError('samples must be (N, d) and targets (N,)')
        if n_train < 1 or n_test < 0 or n_train + n_test > samples.shape[0]:
            raise ValueError('split {}+{} does not fit {} samples'.format(
                n_train, n_test, samples.shape[0]))
        if not (np.all(np.isfinite(samples)) and np.all(np.isfinite(targets))):
            raise ValueError('dataset contains non-finite values')
        self.samples = samples
        self.targets = targets
        self.n_train = int(n_train)
        self.n_test = int(n_test)
        self.act = act or SatLin()
        self.scale_factor = float(scale_factor)
        self.input_dim = samples.shape[1]
        self.domain_dim = self.input_dim + 1
        self.range_dim = self.n_train

    def __repr__(self):
        return 'NnProblem(d={}, n_train={}, n_test={})'.format(
            self.input_dim, self.n_train, self.n_test)

    @property
    def train_inputs(self):
        return self.samples[:self.n_train]

    @property
    def train_targets(self):
        return self.targets[:self.n_train]

    @property
    def test_inputs(self):
        return self.samples[self.n_train:self.n_train + self.n_test]

    @property
    def test_targets(self):
        return self.targets[self.n_train:self.n_train + self.n_test]

    def preactivation(self, p, inputs=None):
        inputs = self.train_inputs if inputs is None else inputs
        return inputs @ p[:-1] + p[-1]

    def predict(self, p, inputs):
        p = as_vector(p, self.domain_dim, 'params')
        return sigma(self.act, self.preactivation(p, inputs))

    def _apply(self, p):
        return sigma(self.act, self.preactivation(p))

    def linearize(self, p):
        p = as_vector(p, self.domain_dim, 'params')
        pre = self.preactivation(p)
        return sigma(self.act, pre), _NnLinearization(self, p, sigma_rderiv(self.act, pre))

    def _jacobian(self, p, h):
        return self.linearize(p)[1](h)

    def _adjoint(self, p, r):
        return self.linearize(p)[1].adjoint(r)


def nn_forward(prob, p):
    return prob.apply(p)


def nn_jacobian_apply(prob, p, hdir):
    return prob.jacobian_apply(p, hdir)


def nn_adjoint_apply(prob, p, r):
    return prob.adjoint_apply(p, r)


def prediction_errors(prob, p):
    """Relative test-set misfits ``|NN(z_i) - y_i| / |y_i|``."""
    y = prob.test_targets
    if prob.n_test == 0:
        raise ValueError('problem has no test samples')
    if np.any(np.abs(y) < 1e-12):
        raise ZeroDivisionError('a test target vanishes; relative misfit is undefined')
    return np.abs(prob.predict(p, prob.test_inputs) - y) / np.abs(y)


def performance(prob, p):
    """One minus the mean relative misfit over the test slice."""
    return 1.0 - float(np.mean(prediction_errors(prob, p)))


def _unit_ball(rng, count, dim):
    z = rng.standard_normal((count, dim))
    z /= np.linalg.norm(z, axis=1)[:, None]
    return z * rng.random(count)[:, None] ** (1.0 / dim)


def synth_dataset(n_train, n_test, input_dim=14, noise_pct=0.0, seed=0, act=None):
    """Synthetic stand-in for the sensor data with known ground truth.

    Ground-truth weights and bias are uniform in (-1, 1), inputs uniform in
    the unit ball, targets ``sigma(<W*, z> + b*)`` perturbed by a Gaussian
    vector of norm ``noise_pct * |y|``. Inputs are then divided by the
    largest training-input norm.

    Returns
    -------
    prob : NnProblem
    truth : ndarray
        Ground-truth parameters ``(W*, b*)`` in the scaled coordinates.
    """
    if n_train < 1 or n_test < 0 or input_dim < 1:
        raise ValueError('dataset dimensions must be positive')
    act = act or SatLin()
    rng = np.random.default_rng(seed)
    truth = rng.uniform(-1.0, 1.0, input_dim + 1)
    total = n_train + n_test
    raw = _unit_ball(rng, total, input_dim)
    scale = float(np.max(np.linalg.norm(raw[:n_train], axis=1)))
    z = raw / scale
    # W* acts on the scaled inputs so that the scaled problem is consistent
    y = sigma(act, z @ truth[:-1] + truth[-1])
    if noise_pct > 0:
        e = rng.standard_normal(total)
        y = y + noise_pct * np.linalg.norm(y) * e / np.linalg.norm(e)
    return NnProblem(z, y, n_train, n_test, act=act, scale_factor=scale), truth


def load_csv_dataset(path, target_column, excluded_columns=(), n_train=None, n_test=0,
                     act=None, test_scale='train', has_header=None):
    """Read a numeric CSV into an :class:`NnProblem`.

    Columns are addressed by zero-based index. The target column and the
    excluded columns are dropped from the inputs. Inputs and targets are
    divided by the largest training-input norm; with ``test_scale='own'``
    the test rows use their own maximum instead.
    """
    with open(path, newline='') as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DatasetError('{}: no data rows'.format(path))
    if has_header is None:
        try:
            [float(v) for v in rows[0]]
            has_header = False
        except ValueError:
            has_header = True
    start = 1 if has_header else 0
    width = len(rows[start]) if len(rows) > start else 0
    data = []
    for idx, row in enumerate(rows[start:], start=start):
        if len(row) != width:
            raise DatasetError('row {}: expected {} columns, got {}'.format(idx, width, len(row)))
        try:
            data.append([float(v) for v in row])
        except ValueError as exc:
            raise DatasetError('row {}: {}'.format(idx, exc))
    data = np.array(data, dtype=float)
    for col in (target_column, *excluded_columns):
        if not 0 <= col < width:
            raise DatasetError('column {} does not exist (file has {})'.format(col, width))
    keep = [j for j in range(width) if j != target_column and j not in set(excluded_columns)]
    inputs = data[:, keep]
    targets = data[:, target_column]
    if n_train is None:
        n_train = len(data) - n_test
    if n_train < 1 or n_train + n_test > len(data):
        raise DatasetError('split {}+{} does not fit {} rows'.format(n_train, n_test, len(data)))
    scale = float(np.max(np.linalg.norm(inputs[:n_train], axis=1)))
    if scale == 0:
        raise DatasetError('all training inputs are zero')
    scaled = inputs / scale
    targets = targets / scale
    if test_scale == 'own' and n_test > 0:
        sl = slice(n_train, n_train + n_test)
        own = float(np.max(np.linalg.norm(inputs[sl], axis=1)))
        scaled[sl] = inputs[sl] / own
        targets[sl] = data[sl, target_column] / own
    elif test_scale != 'train':
        raise ValueError("test_scale must be 'train' or 'own'")
    return NnProblem(scaled, targets, n_train, n_test, act=act, scale_factor=scale)
