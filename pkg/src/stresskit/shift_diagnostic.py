"""Adversarial origin classification: can a model tell the two splits apart?

Rows from the first split are labelled 1, rows from the second 0. Models are
always fitted in one canonical orientation (the lexicographically smaller
split name is coded 1) and the results are re-expressed in the orientation
requested, so swapping the arguments swaps sensitivity and specificity and
leaves accuracy and AUC untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifiers import ClassifierSpec, fit
from .data_model import DatasetSplit, explode_to_minutes, hourly_dataset
from .errors import ConfigError, DataError, ManifestMismatchError, SingleClassError
from .evaluation import (
    ConfusionCounts,
    EvaluationReport,
    Metrics,
    RocPoint,
    roc_curve,
    split_indices,
)
from .imputation import ImputationPolicy, impute
from .seeding import sub_seed

DEFAULT_SPECS = (ClassifierSpec("gbdt"), ClassifierSpec("random_forest"), ClassifierSpec("dtree"))


@dataclass(frozen=True, eq=False)
class OriginDataset:
    features: np.ndarray
    labels: np.ndarray
    split_names: np.ndarray
    hour_ids: np.ndarray
    positive_split: str
    negative_split: str
    excluded: dict
    layout: tuple

    def __len__(self) -> int:
        return self.labels.size


def _rows(split: DatasetSplit, groups, granularity: str):
    if granularity == "hourly":
        return hourly_dataset(split, groups)
    if granularity == "minute":
        return explode_to_minutes(split, groups)
    raise ConfigError(f"granularity must be 'hourly' or 'minute', got {granularity!r}")


def build_origin_dataset(
    train: DatasetSplit,
    test: DatasetSplit,
    groups=None,
    seed: int = 0,
    granularity: str = "hourly",
    policy: ImputationPolicy | None = None,
) -> OriginDataset:
    """Stack both splits with origin labels (first argument = 1) and shuffle.

    Without an imputation policy, rows missing any selected group are excluded
    and counted per split. With a policy, the imputer is fitted on `train`.
    """
    if train.manifest != test.manifest:
        raise ManifestMismatchError("splits use different manifests")
    if not len(train) or not len(test):
        raise DataError("both splits must be non-empty")
    a, b = _rows(train, groups, granularity), _rows(test, groups, granularity)
    if policy is None:
        keep_a, keep_b = a.complete_rows(), b.complete_rows()
        excluded = {"first": int((~keep_a).sum()), "second": int((~keep_b).sum())}
        a, b = a.take(np.flatnonzero(keep_a)), b.take(np.flatnonzero(keep_b))
    else:
        a_imp, removed_a = impute(a, a, policy)
        b, removed_b = impute(a, b, policy)
        a = a_imp
        excluded = {"first": len(removed_a), "second": len(removed_b)}
    feats = np.vstack([a.features, b.features])
    labels = np.r_[np.ones(len(a), np.int64), np.zeros(len(b), np.int64)]
    names = np.array([train.split_name] * len(a) + [test.split_name] * len(b), dtype=object)
    ids = np.concatenate([a.hour_ids, b.hour_ids]).astype(object)
    minutes = np.concatenate([a.minute_index, b.minute_index])
    # canonical row order first, so the shuffle ignores which split came first
    canon = sorted(range(labels.size), key=lambda i: (names[i], ids[i], int(minutes[i])))
    perm = np.asarray(canon, dtype=np.int64)[np.random.default_rng(seed).permutation(labels.size)]
    return OriginDataset(
        feats[perm], labels[perm], names[perm], ids[perm],
        train.split_name, test.split_name, excluded, a.layout,
    )


def verdict(auc: float | None) -> str | None:
    if auc is None:
        return None
    if auc < 0.6:
        return "none"
    if auc <= 0.8:
        return "moderate"
    return "severe"


@dataclass
class ShiftReport:
    entries: list[tuple[ClassifierSpec, EvaluationReport]] = field(default_factory=list)
    positive_split: str = "train"
    n_rows: int = 0
    excluded: dict = field(default_factory=dict)

    @property
    def top_auc(self) -> float | None:
        aucs = [r.auc for _, r in self.entries if r.auc is not None]
        return max(aucs) if aucs else None

    @property
    def top_accuracy(self) -> float | None:
        accs = [r.accuracy for _, r in self.entries if r.accuracy is not None]
        return max(accs) if accs else None

    @property
    def verdict(self) -> str | None:
        return verdict(self.top_auc)

    def summary_rows(self) -> list[dict]:
        return [
            {
                "classifier": spec.kind,
                "accuracy": r.accuracy,
                "f1": r.f1,
                "sensitivity": r.recall_sensitivity,
                "specificity": r.specificity,
                "auc": r.auc,
                "verdict": verdict(r.auc),
            }
            for spec, r in self.entries
        ]

    def to_dict(self) -> dict:
        return {
            "positive_split": self.positive_split,
            "n_rows": self.n_rows,
            "excluded": self.excluded,
            "top_auc": self.top_auc,
            "top_accuracy": self.top_accuracy,
            "verdict": self.verdict,
            "classifiers": [
                {"spec": spec.to_dict(), "report": r.to_dict()} for spec, r in self.entries
            ],
        }


def _flip_points(points: Sequence[RocPoint]) -> list[RocPoint]:
    """The ROC of (1 - score, 1 - label) expressed through the original curve.

    Thresholding 1 - s at 1 - s_k selects s <= s_k, the complement of the
    previous (higher-threshold) vertex of the original curve.
    """
    flipped = [RocPoint(0.0, 0.0, float("inf"))]
    for k in range(len(points) - 1, 0, -1):
        prev = points[k - 1]
        flipped.append(RocPoint(1.0 - prev.tpr, 1.0 - prev.fpr, 1.0 - points[k].threshold))
    return flipped


def run_shift_diagnostic(
    origin: OriginDataset,
    specs: Sequence[ClassifierSpec] = DEFAULT_SPECS,
    seed: int = 0,
    train_frac: float = 0.8,
    n_jobs: int = 1,
) -> ShiftReport:
    report = ShiftReport(positive_split=origin.positive_split, n_rows=len(origin), excluded=dict(origin.excluded))
    if not specs:
        return report
    if np.unique(origin.labels).size < 2:
        raise SingleClassError("origin data must contain rows from both splits")
    flip = origin.negative_split < origin.positive_split
    y_canon = 1 - origin.labels if flip else origin.labels
    tr, ho = split_indices(y_canon, train_frac, stratified=True, seed=sub_seed(seed, "split"))
    for spec in specs:
        model_spec = spec.with_seed(sub_seed(seed, f"model/{spec.seed}"))
        model = fit(model_spec, origin.features[tr], y_canon[tr], n_jobs=n_jobs)
        proba = model.predict_proba(origin.features[ho])
        pred = model.predict(origin.features[ho])
        truth = y_canon[ho]
        tp = int(((pred == 1) & (truth == 1)).sum())
        fp = int(((pred == 1) & (truth == 0)).sum())
        tn = int(((pred == 0) & (truth == 0)).sum())
        fn = int(((pred == 0) & (truth == 1)).sum())
        points, auc = roc_curve(proba, truth)
        if flip:
            counts = ConfusionCounts(tp=tn, fp=fn, tn=tp, fn=fp)
            points = _flip_points(points) if points else points
        else:
            counts = ConfusionCounts(tp, fp, tn, fn)
        metadata = {
            "seed": int(seed),
            "n_train": int(tr.size),
            "n_holdout": int(ho.size),
            "classifier": model_spec.to_dict(),
            "positive_split": origin.positive_split,
        }
        report.entries.append((spec, EvaluationReport(Metrics.from_counts(counts), points, auc, metadata)))
    return report
