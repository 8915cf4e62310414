"""Serialization of traces, series and run summaries.

Floats are written with 17 significant digits so files round-trip
losslessly; NaN becomes an empty CSV field or JSON ``null``.
"""

import csv
import hashlib
import json
import math

import numpy as np

__all__ = ['TRACE_COLUMNS', 'fmt', 'write_trace_csv', 'read_trace_csv', 'write_series_csv',
           'write_json', 'canonical_json', 'config_hash']

TRACE_COLUMNS = ('k', 'alpha_k', 'lambda_k', 'residual', 'distance', 'step_norm')


def fmt(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ''
    return format(value, '.17g')


def write_trace_csv(path, trace):
    with open(path, 'w', newline='') as fh:
        out = csv.writer(fh, lineterminator='\n')
        out.writerow(TRACE_COLUMNS)
        for r in trace.records:
            out.writerow([fmt(r.k), fmt(r.alpha_k), fmt(r.lambda_k), fmt(r.residual_norm),
                          fmt(r.distance), fmt(r.step_norm)])


def read_trace_csv(path):
    """Return a dict of column name to float array (NaN for empty fields)."""
    with open(path, newline='') as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        cols[name] = np.array([float(row[j]) if row[j] else math.nan for row in body])
    return cols


def write_series_csv(path, header, rows):
    with open(path, 'w', newline='') as fh:
        out = csv.writer(fh, lineterminator='\n')
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return None if not math.isfinite(obj) else obj
    return obj


def canonical_json(obj):
    # repr of a Python float is the shortest round-tripping string, so this is platform stable
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(',', ':'), allow_nan=False)


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def write_json(path, obj):
    with open(path, 'w') as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write('\n')
