"""Stability and ranking-quality metrics with entity-level uncertainty.

Scores live at the (entity, snapshot) level but entities are the sampling
unit, so every confidence interval here uses an entity-level (cluster)
bootstrap: entities are resampled with replacement and each drawn entity
carries all of its snapshot rows into the resample. Resample ``r`` always
draws from a generator seeded with ``mix64(seed, r)``, which makes every
interval reproducible from (data, seed) alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from fortress.rng import mix64, spawn

MEAN = "mean"
ABS_MEAN_EPS = "abs_mean_eps"
_CV_MODES = (MEAN, ABS_MEAN_EPS)
_CV_EPS = 1e-12


@dataclass
class ConfidenceInterval:
    """Bootstrap percentile interval around a point estimate.

    ``lo <= point <= hi`` is typical but not guaranteed: the percentile
    bootstrap can (rarely) place the full-sample point outside the interval.
    """

    point: float
    lo: float
    hi: float
    level: float
    resamples: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "lo": self.lo,
            "hi": self.hi,
            "level": self.level,
            "resamples": self.resamples,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ConfidenceInterval":
        try:
            return cls(
                point=float(doc["point"]),
                lo=float(doc["lo"]),
                hi=float(doc["hi"]),
                level=float(doc["level"]),
                resamples=int(doc["resamples"]),
                seed=int(doc["seed"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed confidence interval document: {exc}") from None


@dataclass
class PairedDelta:
    """Outcome of a paired bootstrap comparison of two models."""

    delta: ConfidenceInterval
    significant_improvement: bool


def cv(values: Sequence[float] | np.ndarray, mode: str = MEAN) -> float:
    """Coefficient of variation of a series: population sigma over a mean.

    ``mode="mean"`` divides by the mean and requires it to be strictly
    positive (appropriate for scores in (0, 1)). ``mode="abs_mean_eps"``
    divides by ``|mean| + 1e-12`` and is defined for any finite series
    (appropriate for raw, possibly negative, feature values).

    Raises:
        ValueError: fewer than 2 values, non-finite values, unknown mode,
            or non-positive mean in ``"mean"`` mode.
    """
    if mode not in _CV_MODES:
        raise ValueError(f"unknown cv mode {mode!r}, expected one of {_CV_MODES}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"cv expects a 1-d series, got shape {arr.shape}")
    if arr.size < 2:
        raise ValueError(f"cv needs at least 2 values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cv is undefined for non-finite values")
    mu = float(np.mean(arr))
    sigma = float(np.sqrt(np.mean((arr - mu) ** 2)))
    if mode == MEAN:
        if mu <= 0.0:
            raise ValueError(f"cv mode 'mean' requires a positive mean, got {mu!r}")
        return sigma / mu
    return sigma / (abs(mu) + _CV_EPS)


def _check_binary_labels(labels: np.ndarray) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary (0/1)")
    return y


def pr_auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Average precision over the precision-recall curve with tie handling.

    Rows are ranked by score descending; rows with exactly equal scores form
    one block that enters the curve atomically. With ``TP_k`` and ``k`` the
    cumulative positives and rows at the end of block ``k``:

        AP = sum over blocks of (R_k - R_{k-1}) * P_k,
        P_k = TP_k / k,  R_k = TP_k / total_positives.

    The result therefore does not depend on the input order of tied rows.

    Raises:
        ValueError: length mismatch, empty input, non-finite scores,
            non-binary labels, or no positive labels.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary_labels(labels)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels disagree in shape: {s.shape} vs {y.shape}")
    if s.size == 0:
        raise ValueError("pr_auc is undefined on empty input")
    if not np.all(np.isfinite(s)):
        raise ValueError("pr_auc is undefined for non-finite scores")
    pos = float(np.sum(y))
    if pos == 0.0:
        raise ValueError("pr_auc is undefined without positive labels")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    ends = np.nonzero(np.append(_block_boundaries(s_sorted), True))[0]
    tp = np.cumsum(y_sorted)[ends]
    k = (ends + 1).astype(np.float64)
    recall = tp / pos
    d_recall = np.diff(recall, prepend=0.0)
    precision = tp / k
    return float(np.sum(d_recall * precision))


def _block_boundaries(s_sorted: np.ndarray) -> np.ndarray:
    """Boolean array marking positions followed by a strictly lower score."""
    return s_sorted[1:] != s_sorted[:-1]


def percentile_nearest_rank(values: Sequence[float] | np.ndarray, p: float) -> float:
    """Nearest-rank percentile: the element at rank ``ceil(p/100 * n)`` of the
    ascending sort (1-indexed). Always returns an element of ``values``.

    Raises:
        ValueError: empty input, non-finite values, or ``p`` outside (0, 100].
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("percentile of an empty sequence is undefined")
    if not np.all(np.isfinite(arr)):
        raise ValueError("percentile is undefined for non-finite values")
    if not (0.0 < p <= 100.0):
        raise ValueError(f"percentile p must be in (0, 100], got {p!r}")
    n = arr.size
    rank = math.ceil(p * n / 100.0 - 1e-9)
    rank = min(max(rank, 1), n)
    return float(np.sort(arr, kind="stable")[rank - 1])


def bootstrap_ci(
    statistic: Callable[[np.ndarray], float],
    entities: Sequence | np.ndarray,
    b: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> ConfidenceInterval:
    """Entity-level bootstrap percentile interval for an arbitrary statistic.

    ``statistic`` receives an array of entities (here: whatever atomic unit
    the caller resamples, usually entity ids or indices) and must return a
    float, raising ``ValueError`` when undefined on a resample. Undefined
    resamples are redrawn with the next derived seed; after ``10 * b`` total
    attempts the interval itself is declared undefined.

    The point estimate is the statistic on the full entity set; the interval
    is the nearest-rank (1-level)/2 and (1+level)/2 percentiles of the ``b``
    resample values.
    """
    arr = np.asarray(entities)
    if arr.ndim != 1:
        raise ValueError(f"entities must be 1-d, got shape {arr.shape}")
    n = arr.size
    if n < 2:
        raise ValueError(f"bootstrap needs at least 2 entities, got {n}")
    if b < 2:
        raise ValueError(f"bootstrap needs at least 2 resamples, got {b}")
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must be in (0, 1), got {level!r}")
    point = float(statistic(arr))
    values = np.empty(b, dtype=np.float64)
    got = 0
    attempt = 0
    max_attempts = 10 * b
    while got < b:
        if attempt >= max_attempts:
            raise ValueError(
                f"bootstrap statistic undefined too often: "
                f"{got} of {b} resamples after {max_attempts} attempts"
            )
        rng = spawn(seed, attempt)
        attempt += 1
        idx = rng.integers(0, n, size=n)
        try:
            values[got] = float(statistic(arr[idx]))
        except ValueError:
            continue
        got += 1
    lo = percentile_nearest_rank(values, (1.0 - level) / 2.0 * 100.0)
    hi = percentile_nearest_rank(values, (1.0 + level) / 2.0 * 100.0)
    return ConfidenceInterval(point=point, lo=lo, hi=hi, level=level, resamples=b, seed=seed)


class _WeightedAp:
    """Average precision under integer row weights, for bootstrap reuse.

    Sorting happens once; every resample then only recomputes weighted
    cumulative sums. Because the weights are integers, the result is exactly
    the average precision of the materialized row multiset.
    """

    def __init__(self, scores: np.ndarray, y: np.ndarray):
        order = np.argsort(-scores, kind="stable")
        s_sorted = scores[order]
        self.order = order
        self.y_sorted = y[order]
        self.ends = np.nonzero(np.append(_block_boundaries(s_sorted), True))[0]

    def ap(self, row_weights: np.ndarray) -> float:
        w = row_weights[self.order]
        tp = np.cumsum(w * self.y_sorted)[self.ends]
        k = np.cumsum(w)[self.ends]
        pos = tp[-1]
        if pos == 0.0:
            raise ValueError("no positive rows in resample")
        recall = tp / pos
        d_recall = np.diff(recall, prepend=0.0)
        contributes = d_recall > 0.0
        return float(np.sum(d_recall[contributes] * (tp[contributes] / k[contributes])))


def paired_delta_significance(
    scores_a: Sequence[float] | np.ndarray,
    scores_b: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    entity_ids: Sequence[str] | np.ndarray,
    b: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> PairedDelta:
    """Paired entity-bootstrap test of ``pr_auc(B) - pr_auc(A)``.

    Both models are evaluated on the same rows; each bootstrap resample draws
    entities once and applies the identical resample to both models, so the
    interval reflects the paired difference, not two independent errors.
    ``significant_improvement`` is true iff the interval's lower bound is
    strictly positive.
    """
    sa = np.asarray(scores_a, dtype=np.float64)
    sb = np.asarray(scores_b, dtype=np.float64)
    y = _check_binary_labels(labels)
    ents = np.asarray(entity_ids)
    if not (sa.shape == sb.shape == y.shape == ents.shape):
        raise ValueError(
            "scores_a, scores_b, labels, entity_ids must share one shape, got "
            f"{sa.shape}, {sb.shape}, {y.shape}, {ents.shape}"
        )
    if sa.size == 0:
        raise ValueError("paired delta is undefined on empty input")
    if not (np.all(np.isfinite(sa)) and np.all(np.isfinite(sb))):
        raise ValueError("paired delta is undefined for non-finite scores")
    unique_ents, inverse = np.unique(ents, return_inverse=True)
    n_ent = unique_ents.size
    if n_ent < 2:
        raise ValueError(f"paired bootstrap needs at least 2 entities, got {n_ent}")
    if b < 2:
        raise ValueError(f"bootstrap needs at least 2 resamples, got {b}")
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must be in (0, 1), got {level!r}")

    point = pr_auc(sb, y) - pr_auc(sa, y)
    ap_a = _WeightedAp(sa, y)
    ap_b = _WeightedAp(sb, y)

    values = np.empty(b, dtype=np.float64)
    got = 0
    attempt = 0
    max_attempts = 10 * b
    while got < b:
        if attempt >= max_attempts:
            raise ValueError(
                f"paired bootstrap undefined too often: "
                f"{got} of {b} resamples after {max_attempts} attempts"
            )
        rng = spawn(seed, attempt)
        attempt += 1
        draw = rng.integers(0, n_ent, size=n_ent)
        w = np.bincount(draw, minlength=n_ent)[inverse].astype(np.float64)
        try:
            values[got] = ap_b.ap(w) - ap_a.ap(w)
        except ValueError:
            continue
        got += 1
    lo = percentile_nearest_rank(values, (1.0 - level) / 2.0 * 100.0)
    hi = percentile_nearest_rank(values, (1.0 + level) / 2.0 * 100.0)
    ci = ConfidenceInterval(point=point, lo=lo, hi=hi, level=level, resamples=b, seed=seed)
    return PairedDelta(delta=ci, significant_improvement=bool(lo > 0.0))


def bootstrap_pr_auc_ci(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    entity_ids: Sequence[str] | np.ndarray,
    b: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> ConfidenceInterval:
    """Entity-bootstrap interval for average precision on pooled rows.

    Semantically identical to calling :func:`bootstrap_ci` with a statistic
    that materializes each resample's rows and reruns :func:`pr_auc`; rows of
    a drawn entity are carried as integer weights instead, which gives the
    same values (up to float summation order) without re-sorting per resample.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary_labels(labels)
    ents = np.asarray(entity_ids)
    if not (s.shape == y.shape == ents.shape):
        raise ValueError(
            f"scores, labels, entity_ids must share one shape, got "
            f"{s.shape}, {y.shape}, {ents.shape}"
        )
    if s.size == 0:
        raise ValueError("pr_auc is undefined on empty input")
    if not np.all(np.isfinite(s)):
        raise ValueError("pr_auc is undefined for non-finite scores")
    unique_ents, inverse = np.unique(ents, return_inverse=True)
    n_ent = unique_ents.size
    if n_ent < 2:
        raise ValueError(f"bootstrap needs at least 2 entities, got {n_ent}")
    if b < 2:
        raise ValueError(f"bootstrap needs at least 2 resamples, got {b}")
    if not (0.0 < level < 1.0):
        raise ValueError(f"level must be in (0, 1), got {level!r}")
    point = pr_auc(s, y)
    helper = _WeightedAp(s, y)
    values = np.empty(b, dtype=np.float64)
    got = 0
    attempt = 0
    max_attempts = 10 * b
    while got < b:
        if attempt >= max_attempts:
            raise ValueError(
                f"bootstrap statistic undefined too often: "
                f"{got} of {b} resamples after {max_attempts} attempts"
            )
        rng = spawn(seed, attempt)
        attempt += 1
        draw = rng.integers(0, n_ent, size=n_ent)
        w = np.bincount(draw, minlength=n_ent)[inverse].astype(np.float64)
        try:
            values[got] = helper.ap(w)
        except ValueError:
            continue
        got += 1
    lo = percentile_nearest_rank(values, (1.0 - level) / 2.0 * 100.0)
    hi = percentile_nearest_rank(values, (1.0 + level) / 2.0 * 100.0)
    return ConfidenceInterval(point=point, lo=lo, hi=hi, level=level, resamples=b, seed=seed)


def mean_entity_cv(series: Mapping[str, np.ndarray] | Mapping[str, Sequence[float]]) -> float:
    """Mean coefficient of variation over entities with at least 2 scores.

    Raises:
        ValueError: if no entity has 2 or more scores.
    """
    cvs = [cv(np.asarray(s, dtype=np.float64)) for s in series.values() if len(s) >= 2]
    if not cvs:
        raise ValueError("no entity has 2 or more snapshots; mean CV undefined")
    return float(np.mean(cvs))
