"""End-to-end runs: greedy stability pruning and the comparison table.

``fortress_run`` is the main entry point. It partitions entities, trains an
all-features baseline on TRAIN, runs the stability analysis on VAL to obtain
a fixed candidate ranking, and then makes one greedy pass over the candidates.
Each candidate is tentatively retrained away and compared against the current
baseline with a paired entity-bootstrap on VAL; acceptance updates the
baseline. Two acceptance gates exist:

* ``strict``: accept only if removing the feature significantly improves
  PR-AUC (the interval's lower bound is strictly positive).
* ``noninferior``: accept if the PR-AUC change is non-inferior (lower bound
  above ``-epsilon``) and the VAL mean entity score CV strictly decreased.

``experiment_table`` reruns the surrounding comparisons (single-snapshot and
multi-snapshot trainings, full and stable-only feature sets) and evaluates
everything on the same TEST partition.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from fortress.data import (
    TRAIN,
    VAL,
    TEST,
    PartitionAssignment,
    SnapshotDataset,
    latest_snapshot_view,
    partition_entities,
    rows_in_partition,
)
from fortress.metrics import (
    ConfidenceInterval,
    bootstrap_ci,
    bootstrap_pr_auc_ci,
    cv,
    paired_delta_significance,
    pr_auc,
)
from fortress.model import BoostedModel, TrainConfig, TrainMatrix, mask_from_names, train
from fortress.rng import mix64
from fortress.stability import StabilityReport, build_stability_report, prune_candidates

log = logging.getLogger(__name__)

STRICT = "strict"
NON_INFERIOR = "noninferior"
_MODES = (STRICT, NON_INFERIOR)

SR_PREFIX = "f_sr_"
ENG_PREFIX = "f_eng_"

ROW_SR_ONLY = "sr_only_single_snapshot"
ROW_ALL_SINGLE = "all_features_single_snapshot"
ROW_ALL_MULTI = "all_features_multi_snapshot"
ROW_FORTRESS = "fortress"


@dataclass(frozen=True)
class PipelineConfig:
    """Configuration of a fortress run.

    ``candidates`` is an int or ``"auto"`` (top half of the ranking).
    ``seed`` drives every bootstrap in the run: iteration ``i`` of the greedy
    loop uses ``mix64(seed, i)``, evaluation intervals use further derived
    seeds, so the whole run is reproducible from (data, config).
    """

    train: TrainConfig = field(default_factory=TrainConfig)
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    salt: str = "fortress"
    percentile: float = 75.0
    candidates: int | str = "auto"
    mode: str = STRICT
    epsilon: float = 0.002
    bootstrap_b: int = 1000
    level: float = 0.95
    seed: int = 42

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not (0.0 < self.percentile <= 100.0):
            raise ValueError(f"percentile must be in (0, 100], got {self.percentile}")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["train"] = self.train.to_dict()
        doc["fractions"] = list(self.fractions)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown pipeline config fields: {sorted(unknown)}")
        kwargs = dict(doc)
        if "train" in kwargs:
            kwargs["train"] = TrainConfig.from_dict(dict(kwargs["train"]))
        if "fractions" in kwargs:
            fractions = tuple(float(f) for f in kwargs["fractions"])
            if len(fractions) != 3:
                raise ValueError("fractions must have exactly 3 entries")
            kwargs["fractions"] = fractions
        return cls(**kwargs)


@dataclass
class PruneIteration:
    """One greedy step: a candidate, its paired delta, and the verdict."""

    candidate: str
    delta: ConfidenceInterval
    accepted: bool
    features_after: tuple[str, ...]
    val_mean_cv_after: float

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "delta_pr_auc": self.delta.to_dict(),
            "accepted": self.accepted,
            "features_after": list(self.features_after),
            "val_mean_cv_after": self.val_mean_cv_after,
        }


@dataclass
class PruneTrace:
    """Complete record of the greedy search, sufficient to audit every gate."""

    mode: str
    epsilon: float
    percentile: float
    bootstrap_b: int
    seed: int
    initial_features: tuple[str, ...]
    candidates: tuple[str, ...]
    initial_val_pr_auc: float
    initial_val_mean_cv: float
    iterations: list[PruneIteration]
    final_features: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "kind": "prune_trace",
            "mode": self.mode,
            "epsilon": self.epsilon,
            "percentile": self.percentile,
            "bootstrap_b": self.bootstrap_b,
            "seed": self.seed,
            "initial_features": list(self.initial_features),
            "candidates": list(self.candidates),
            "initial_val_pr_auc": self.initial_val_pr_auc,
            "initial_val_mean_cv": self.initial_val_mean_cv,
            "iterations": [it.to_dict() for it in self.iterations],
            "final_features": list(self.final_features),
        }


@dataclass
class FortressResult:
    """Everything a fortress run produced."""

    model: BoostedModel
    baseline: BoostedModel
    trace: PruneTrace
    stability: StabilityReport
    partition: PartitionAssignment


@dataclass
class EvalReport:
    """Test-time quality and stability of one model on one entity set."""

    pr_auc: ConfidenceInterval
    mean_entity_cv: ConfidenceInterval | None
    n_rows: int
    n_entities: int
    n_multi_snapshot_entities: int

    def to_dict(self) -> dict:
        return {
            "kind": "eval_report",
            "pr_auc": self.pr_auc.to_dict(),
            "mean_entity_cv": (
                self.mean_entity_cv.to_dict() if self.mean_entity_cv else None
            ),
            "n_rows": self.n_rows,
            "n_entities": self.n_entities,
            "n_multi_snapshot_entities": self.n_multi_snapshot_entities,
        }


@dataclass
class ExperimentRow:
    name: str
    pr_auc: ConfidenceInterval
    mean_entity_cv: ConfidenceInterval | None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pr_auc": self.pr_auc.to_dict(),
            "mean_entity_cv": (
                self.mean_entity_cv.to_dict() if self.mean_entity_cv else None
            ),
        }


@dataclass
class ExperimentResult:
    """The four-way comparison, all rows evaluated on the same TEST rows."""

    rows: list[ExperimentRow]
    models: dict[str, BoostedModel] = field(default_factory=dict, repr=False)
    fortress: FortressResult | None = field(default=None, repr=False)

    def row(self, name: str) -> ExperimentRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise ValueError(f"no experiment row named {name!r}")

    def to_dict(self) -> dict:
        return {
            "kind": "experiment_result",
            "rows": [r.to_dict() for r in self.rows],
        }


def _entity_scores_by_block(
    dataset: SnapshotDataset, entities: Sequence[str], scores: np.ndarray
) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    offset = 0
    for e in entities:
        start, stop = dataset.entity_rows(e)
        k = stop - start
        out[e] = scores[offset:offset + k]
        offset += k
    return out


def _mean_entity_cv_of(
    dataset: SnapshotDataset, entities: Sequence[str], scores: np.ndarray
) -> float:
    cvs = []
    offset = 0
    for e in entities:
        start, stop = dataset.entity_rows(e)
        k = stop - start
        if k >= 2:
            cvs.append(cv(scores[offset:offset + k]))
        offset += k
    if not cvs:
        raise ValueError("no entity has 2 or more snapshots; mean CV undefined")
    return float(np.mean(cvs))


def fortress_run(
    dataset: SnapshotDataset,
    config: PipelineConfig | None = None,
    partition: PartitionAssignment | None = None,
) -> FortressResult:
    """Partition, train, analyze stability, and greedily prune features.

    See the module docstring for the procedure. The returned final model is
    the last accepted model of the greedy pass (identical to retraining on
    TRAIN with the final mask, since training is deterministic). A
    pre-computed ``partition`` can be supplied; by default entities are
    partitioned with the configured fractions and salt.

    Raises:
        ValueError: empty partitions, single-class training labels, VAL
            without positives, or invalid configuration.
    """
    cfg = config or PipelineConfig()
    if partition is None:
        partition = partition_entities(dataset, cfg.fractions, cfg.salt)
    return _fortress_core(dataset, partition, cfg)


def _fortress_core(
    dataset: SnapshotDataset, partition: PartitionAssignment, cfg: PipelineConfig
) -> FortressResult:
    train_rows = rows_in_partition(dataset, partition, TRAIN)
    if train_rows.size == 0:
        raise ValueError("TRAIN partition is empty")
    val_entities = sorted(
        set(partition.entities_in(VAL)) & set(dataset.entities)
    )
    if not val_entities:
        raise ValueError("VAL partition is empty")
    y_all = dataset.binary_labels()
    tm = TrainMatrix(dataset.X[train_rows], y_all[train_rows])
    log.info("training baseline on %d TRAIN rows, %d features", tm.n_rows, tm.n_features)
    baseline = train(tm, config=cfg.train, schema=dataset.schema)

    stability = build_stability_report(
        baseline, dataset, val_entities, percentile=cfg.percentile
    )
    candidates = prune_candidates(stability.feature_cv_ranking, cfg.candidates)

    val_rows = dataset.rows_for(val_entities)
    X_val = dataset.X[val_rows]
    y_val = y_all[val_rows]
    ents_val = dataset.entity_ids[val_rows]

    cur_model = baseline
    cur_scores = baseline.predict(X_val)
    cur_cv = _mean_entity_cv_of(dataset, val_entities, cur_scores)
    cur_mask = baseline.mask.copy()
    initial_ap = pr_auc(cur_scores, y_val)
    initial_cv = cur_cv
    col_of = {name: j for j, name in enumerate(dataset.schema)}

    iterations: list[PruneIteration] = []
    for i, cand in enumerate(candidates):
        tentative_mask = cur_mask.copy()
        tentative_mask[col_of[cand]] = False
        tentative = train(tm, config=cfg.train, mask=tentative_mask, schema=dataset.schema)
        scores2 = tentative.predict(X_val)
        outcome = paired_delta_significance(
            cur_scores,
            scores2,
            y_val,
            ents_val,
            b=cfg.bootstrap_b,
            seed=mix64(cfg.seed, i),
            level=cfg.level,
        )
        cv2 = _mean_entity_cv_of(dataset, val_entities, scores2)
        if cfg.mode == STRICT:
            accepted = outcome.significant_improvement
        else:
            accepted = (outcome.delta.lo > -cfg.epsilon) and (cv2 < cur_cv)
        if accepted:
            cur_model, cur_scores, cur_cv, cur_mask = tentative, scores2, cv2, tentative_mask
        iterations.append(
            PruneIteration(
                candidate=cand,
                delta=outcome.delta,
                accepted=accepted,
                features_after=tuple(
                    n for n, m in zip(dataset.schema, cur_mask) if m
                ),
                val_mean_cv_after=cur_cv,
            )
        )
        log.info(
            "prune %d/%d %s: delta=[%.5f, %.5f] candidate_cv=%.4f %s",
            i + 1, len(candidates), cand, outcome.delta.lo, outcome.delta.hi,
            cv2, "ACCEPT" if accepted else "reject",
        )

    trace = PruneTrace(
        mode=cfg.mode,
        epsilon=cfg.epsilon,
        percentile=cfg.percentile,
        bootstrap_b=cfg.bootstrap_b,
        seed=cfg.seed,
        initial_features=tuple(dataset.schema),
        candidates=candidates,
        initial_val_pr_auc=initial_ap,
        initial_val_mean_cv=initial_cv,
        iterations=iterations,
        final_features=tuple(n for n, m in zip(dataset.schema, cur_mask) if m),
    )
    return FortressResult(
        model=cur_model,
        baseline=baseline,
        trace=trace,
        stability=stability,
        partition=partition,
    )


def evaluate_model(
    model: BoostedModel,
    dataset: SnapshotDataset,
    entity_ids: Sequence[str],
    b: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> EvalReport:
    """Pooled-row PR-AUC and mean entity score CV with entity-bootstrap CIs.

    ``mean_entity_cv`` is None when no selected entity has 2 or more
    snapshots (stability is undefined on single-snapshot data).
    """
    entities = sorted(set(entity_ids))
    if not entities:
        raise ValueError("cannot evaluate on an empty entity set")
    rows = dataset.rows_for(entities)
    scores = model.predict(dataset.X[rows])
    y = dataset.binary_labels()[rows]
    ents_rows = dataset.entity_ids[rows]

    ap_ci = bootstrap_pr_auc_ci(
        scores, y, ents_rows, b=b, seed=mix64(seed, 1), level=level
    )

    series = _entity_scores_by_block(dataset, entities, scores)
    cv_values = np.array(
        [cv(s) for s in series.values() if s.size >= 2], dtype=np.float64
    )
    if cv_values.size >= 2:
        cv_ci = bootstrap_ci(
            lambda idx: float(np.mean(cv_values[idx])),
            np.arange(cv_values.size),
            b=b,
            seed=mix64(seed, 2),
            level=level,
        )
    else:
        cv_ci = None
    return EvalReport(
        pr_auc=ap_ci,
        mean_entity_cv=cv_ci,
        n_rows=int(rows.size),
        n_entities=len(entities),
        n_multi_snapshot_entities=int(cv_values.size),
    )


def feature_groups(schema: Sequence[str]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split a schema into (semantic, engagement) groups by name prefix.

    Raises:
        ValueError: if any feature matches neither group prefix.
    """
    sr = tuple(n for n in schema if n.startswith(SR_PREFIX))
    eng = tuple(n for n in schema if n.startswith(ENG_PREFIX))
    untagged = [n for n in schema if n not in set(sr) | set(eng)]
    if untagged:
        raise ValueError(
            f"features without a group tag ({SR_PREFIX}* or {ENG_PREFIX}*): {untagged}"
        )
    return sr, eng


def experiment_table(
    dataset: SnapshotDataset, config: PipelineConfig | None = None
) -> ExperimentResult:
    """Build the four-row comparison table on a shared TEST partition.

    Rows: stable features only on the latest snapshot, all features on the
    latest snapshot, all features on all snapshots, and the fortress-pruned
    model. Evaluation always happens on the full multi-snapshot TEST rows.
    """
    cfg = config or PipelineConfig()
    sr, _ = feature_groups(dataset.schema)
    if not sr:
        raise ValueError(f"experiment requires at least one {SR_PREFIX}* feature")
    partition = partition_entities(dataset, cfg.fractions, cfg.salt)

    latest = latest_snapshot_view(dataset)
    y_latest = latest.binary_labels()
    latest_train_rows = rows_in_partition(latest, partition, TRAIN)
    if latest_train_rows.size == 0:
        raise ValueError("TRAIN partition is empty in the latest-snapshot view")
    tm_single = TrainMatrix(latest.X[latest_train_rows], y_latest[latest_train_rows])

    sr_mask = mask_from_names(dataset.schema, sr)
    log.info("experiment: training single-snapshot models on %d rows", tm_single.n_rows)
    m_sr = train(tm_single, config=cfg.train, mask=sr_mask, schema=dataset.schema)
    m_single = train(tm_single, config=cfg.train, schema=dataset.schema)

    core = _fortress_core(dataset, partition, cfg)
    m_multi = core.baseline
    m_fortress = core.model

    test_entities = sorted(set(partition.entities_in(TEST)) & set(dataset.entities))
    if not test_entities:
        raise ValueError("TEST partition is empty")

    named = (
        (ROW_SR_ONLY, m_sr),
        (ROW_ALL_SINGLE, m_single),
        (ROW_ALL_MULTI, m_multi),
        (ROW_FORTRESS, m_fortress),
    )
    rows = []
    models: dict[str, BoostedModel] = {}
    for k, (name, model) in enumerate(named):
        report = evaluate_model(
            model,
            dataset,
            test_entities,
            b=cfg.bootstrap_b,
            seed=mix64(cfg.seed, 1000 + k),
            level=cfg.level,
        )
        rows.append(
            ExperimentRow(
                name=name, pr_auc=report.pr_auc, mean_entity_cv=report.mean_entity_cv
            )
        )
        models[name] = model
        log.info(
            "experiment row %s: pr_auc=%.4f cv=%s",
            name,
            report.pr_auc.point,
            f"{report.mean_entity_cv.point:.4f}" if report.mean_entity_cv else "n/a",
        )
    return ExperimentResult(rows=rows, models=models, fortress=core)


__all__ = [
    "EvalReport",
    "ExperimentResult",
    "ExperimentRow",
    "FortressResult",
    "NON_INFERIOR",
    "PipelineConfig",
    "PruneIteration",
    "PruneTrace",
    "ROW_ALL_MULTI",
    "ROW_ALL_SINGLE",
    "ROW_FORTRESS",
    "ROW_SR_ONLY",
    "STRICT",
    "evaluate_model",
    "experiment_table",
    "feature_groups",
    "fortress_run",
]
