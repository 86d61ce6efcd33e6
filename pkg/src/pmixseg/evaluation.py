"""Scoring detections against the truth and summarizing replicates."""

from collections import defaultdict

import numpy as np

from .errors import DataError


def jaccard(pred, truth):
    """``|pred & truth| / |pred | truth|``; 1 when both are empty."""
    pred = np.asarray(pred, dtype=bool).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if pred.shape != truth.shape:
        raise DataError("masks differ in length")
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def summarize(rows, keys=("phantom", "omega", "delta", "method"), value="jaccard"):
    """Median and interquartile range of ``value`` per cell.

    ``rows`` is an iterable of dicts.  Cells are returned sorted by key so
    the table does not depend on replicate order.
    """
    cells = defaultdict(list)
    for r in rows:
        cells[tuple(r[k] for k in keys)].append(float(r[value]))
    out = []
    for key in sorted(cells):
        vals = np.asarray(cells[key])
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        out.append({**dict(zip(keys, key)), "n": int(vals.size), "median": float(med),
                    "q1": float(q1), "q3": float(q3), "iqr": float(q3 - q1)})
    return out
