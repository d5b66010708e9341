"""Independent reference implementations used to cross-check the metrics.

Everything here is written for obviousness, not speed: the average-precision
reference walks the full precision-recall curve threshold by threshold in
O(n^2), and the CV reference leans on the statistics module. Test modules
compare the package implementations against these on hand cases and on large
randomized batches.
"""

from __future__ import annotations

import math
import statistics

import numpy as np


def reference_average_precision(scores, labels) -> float:
    """Average precision by an explicit threshold walk of the PR curve.

    At every distinct score value, taken descending, predict positive for
    rows scoring at or above it; AP accumulates precision weighted by the
    recall gained at that threshold. Tied rows enter together because a
    threshold either keeps or drops all of them.
    """
    s = [float(v) for v in scores]
    y = [float(v) for v in labels]
    total_pos = sum(y)
    if total_pos == 0:
        raise ValueError("no positives")
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(set(s), reverse=True):
        kept = [i for i, v in enumerate(s) if v >= t]
        tp = sum(y[i] for i in kept)
        precision = tp / len(kept)
        recall = tp / total_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def reference_cv(values, mean_abs_eps: bool = False) -> float:
    """Population standard deviation over the mean, via the statistics module."""
    data = [float(v) for v in values]
    sigma = statistics.pstdev(data)
    mu = statistics.fmean(data)
    if mean_abs_eps:
        return sigma / (abs(mu) + 1e-12)
    return sigma / mu


def reference_percentile_nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: 1-indexed rank ceil(p/100 * n) of the sort."""
    data = sorted(float(v) for v in values)
    rank = math.ceil(p / 100.0 * len(data) - 1e-9)
    return data[max(rank, 1) - 1]


def random_ap_instance(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """A random scored instance (n <= 50) with heavy score ties and >=1 positive."""
    n = int(rng.integers(1, 51))
    if rng.random() < 0.5:
        # few distinct values -> many exact ties
        pool = rng.random(int(rng.integers(1, 6)))
        scores = rng.choice(pool, size=n)
    else:
        scores = rng.random(n)
    labels = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(np.float64)
    if labels.sum() == 0:
        labels[int(rng.integers(0, n))] = 1.0
    return scores, labels
