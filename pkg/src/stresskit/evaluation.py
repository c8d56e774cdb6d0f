"""Metric battery, ROC/AUC, hour-level shuffled splits and report export.

Ratios with a zero denominator are reported as None ("undefined"), never 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .data_model import DatasetSplit
from .errors import DataError, SingleClassError

UNDEFINED = "undefined"
METRIC_NAMES = ("accuracy", "precision", "recall_sensitivity", "specificity", "f1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass(frozen=True)
class Metrics:
    counts: ConfusionCounts
    accuracy: float | None
    precision: float | None
    recall_sensitivity: float | None
    specificity: float | None
    f1: float | None

    @classmethod
    def from_counts(cls, c: ConfusionCounts) -> "Metrics":
        precision = _ratio(c.tp, c.tp + c.fp)
        sensitivity = _ratio(c.tp, c.tp + c.fn)
        if precision is None or sensitivity is None:
            f1 = None
        elif precision + sensitivity == 0:
            f1 = 0.0
        else:
            f1 = 2 * precision * sensitivity / (precision + sensitivity)
        return cls(
            c,
            _ratio(c.tp + c.tn, c.total),
            precision,
            sensitivity,
            _ratio(c.tn, c.tn + c.fp),
            f1,
        )

    def as_dict(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _binary(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DataError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int64)


def compute_metrics(predicted, truth) -> Metrics:
    pred = _binary(predicted, "predicted labels")
    true = _binary(truth, "true labels")
    if pred.shape != true.shape:
        raise DataError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    if pred.size == 0:
        raise DataError("cannot compute metrics on zero instances")
    counts = ConfusionCounts(
        tp=int(np.sum((pred == 1) & (true == 1))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        tn=int(np.sum((pred == 0) & (true == 0))),
        fn=int(np.sum((pred == 0) & (true == 1))),
    )
    return Metrics.from_counts(counts)


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


def roc_curve(scores, truth) -> tuple[list[RocPoint], float | None]:
    """ROC staircase at every distinct score plus the (0, 0) origin.

    Tied scores move together. Returns ([], None) when only one class is present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(truth, "true labels")
    if s.shape != y.shape:
        raise DataError("scores and labels must have equal length")
    if s.size == 0:
        raise DataError("roc_curve needs at least one instance")
    if not np.isfinite(s).all():
        raise DataError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return [], None
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s_sorted)), s_sorted.size - 1]
    tps = np.cumsum(y_sorted)[last_of_run]
    fps = (last_of_run + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s_sorted[last_of_run]]
    points = [RocPoint(float(f), float(t), float(th)) for f, t, th in zip(fpr, tpr, thresholds)]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return points, auc


# -- splitting ---------------------------------------------------------------


def split_indices(labels, train_frac: float = 0.8, stratified: bool = True, seed: int = 0):
    """Shuffled (train, holdout) index arrays.

    Stratification takes the first round((1 - train_frac) * n_c) members of each
    class in one shared random order, so the partition does not depend on which
    class is coded 1.
    """
    y = np.asarray(labels)
    n = y.size
    if n < 2:
        raise DataError("need at least 2 instances to split")
    if not 0.0 < train_frac < 1.0:
        raise DataError("train_frac must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(n)
    hold = np.zeros(n, bool)
    if stratified:
        classes = np.unique(y)
        if classes.size < 2:
            raise SingleClassError("stratified split needs both classes present")
        for c in classes:
            members = perm[y[perm] == c]
            n_train = math.floor(train_frac * members.size + 0.5)
            hold[members[: members.size - n_train]] = True
    else:
        n_train = math.floor(train_frac * n + 0.5)
        hold[perm[: n - n_train]] = True
    if not hold.any():
        hold[perm[0]] = True
    if hold.all():
        hold[perm[-1]] = False
    return perm[~hold[perm]], perm[hold[perm]]


def shuffled_split(
    split: DatasetSplit, train_frac: float = 0.8, stratified: bool = True, seed: int = 0
) -> tuple[DatasetSplit, DatasetSplit]:
    """Hour-level split: every minute of an hour lands on the same side."""
    tr, ho = split_indices(split.labels, train_frac, stratified, seed)
    return split.subset(tr), split.subset(ho)


# -- reports -----------------------------------------------------------------


@dataclass
class EvaluationReport:
    metrics: Metrics
    roc_points: list[RocPoint]
    auc: float | None
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def counts(self) -> ConfusionCounts:
        return self.metrics.counts

    def __getattr__(self, name: str):
        if name in METRIC_NAMES:
            return getattr(self.metrics, name)
        raise AttributeError(name)

    def to_dict(self) -> dict:
        c = self.counts
        return {
            "counts": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
            **self.metrics.as_dict(),
            "auc": self.auc,
            "roc_points": [
                {"fpr": p.fpr, "tpr": p.tpr, "threshold": _json_threshold(p.threshold)}
                for p in self.roc_points
            ],
            "metadata": self.metadata,
        }

    def flat_row(self, prefix: str = "") -> dict[str, Any]:
        c = self.counts
        row = {f"{prefix}n": c.total, f"{prefix}tp": c.tp, f"{prefix}fp": c.fp,
               f"{prefix}tn": c.tn, f"{prefix}fn": c.fn}
        for k, v in self.metrics.as_dict().items():
            row[prefix + k] = v
        row[prefix + "auc"] = self.auc
        return row


def _json_threshold(t: float):
    return "inf" if math.isinf(t) else t


def evaluate(
    scores,
    truth,
    predicted=None,
    threshold: float = 0.5,
    metadata: Mapping[str, Any] | None = None,
) -> EvaluationReport:
    """Full battery from probability scores; labels default to score >= threshold."""
    s = np.asarray(scores, dtype=np.float64)
    pred = (s >= threshold).astype(np.int64) if predicted is None else np.asarray(predicted)
    metrics = compute_metrics(pred, truth)
    points, auc = roc_curve(s, truth)
    return EvaluationReport(metrics, points, auc, dict(metadata or {}))


def format_value(v) -> str:
    if v is None:
        return UNDEFINED
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


def write_csv(
    path, rows: Sequence[Mapping[str, Any]], header_lines: Sequence[str] = (), columns=None
) -> None:
    """CSV with optional leading '# ' provenance lines; None cells become 'undefined'."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r.get(c, "")) if c in r else "" for c in columns])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))


def write_roc_csv(path, points: Sequence[RocPoint], header_lines: Sequence[str] = ()) -> None:
    rows = [{"threshold": p.threshold, "fpr": p.fpr, "tpr": p.tpr} for p in points]
    write_csv(path, rows, header_lines, columns=["threshold", "fpr", "tpr"])


def roc_svg(points: Sequence[tuple[float, float]], auc: float | None = None, size: int = 400) -> str:
    """Minimal SVG rendering of an ROC polyline with the chance diagonal."""
    pad = 40
    span = size - 2 * pad

    def xy(fpr: float, tpr: float) -> str:
        return f"{pad + fpr * span:.2f},{pad + (1 - tpr) * span:.2f}"

    poly = " ".join(xy(f, t) for f, t in points)
    title = "ROC" if auc is None else f"ROC (AUC = {auc:.4f})"
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">',
            f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#444"/>',
            f'<line x1="{pad}" y1="{pad + span}" x2="{pad + span}" y2="{pad}" '
            'stroke="#aaa" stroke-dasharray="4 4"/>',
            f'<polyline points="{poly}" fill="none" stroke="#c0392b" stroke-width="2"/>',
            f'<text x="{size / 2:.0f}" y="{pad / 2:.0f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>',
            f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" '
            'font-family="sans-serif" font-size="12">false positive rate</text>',
            f'<text x="12" y="{size / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12" transform="rotate(-90 12 {size / 2:.0f})">true positive rate</text>',
            "</svg>",
            "",
        ]
    )
