"""Fusing per-minute classifications into one decision per hour.

Three hour-level voters (mean-threshold, any-stress, LDA meta-classifier) and
the per-group ensemble that averages whichever feature groups are available.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .classifiers import ClassifierSpec, TrainedModel, fit
from .data_model import MINUTES_PER_HOUR
from .errors import DataError, SingleClassError
from .evaluation import compute_metrics

THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
MISSING_FILL = 0.5


@dataclass(frozen=True, eq=False)
class HourPredictionBundle:
    """Sixty minute slots; NaN proba / -1 label marks an unclassified minute."""

    hour_id: str
    minute_probas: np.ndarray
    minute_labels: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.minute_probas, dtype=np.float64)
        lab = np.array(self.minute_labels, dtype=np.int64)
        if p.shape != (MINUTES_PER_HOUR,) or lab.shape != (MINUTES_PER_HOUR,):
            raise DataError("a bundle holds exactly 60 minute entries")
        present = ~np.isnan(p)
        if not np.array_equal(present, lab >= 0):
            raise DataError("a minute label must be present exactly when its probability is")
        if not np.isin(lab[present], (0, 1)).all():
            raise DataError("minute labels must be 0 or 1")
        if ((p[present] < 0) | (p[present] > 1)).any():
            raise DataError("minute probabilities must lie in [0, 1]")
        p.flags.writeable = lab.flags.writeable = False
        object.__setattr__(self, "minute_probas", p)
        object.__setattr__(self, "minute_labels", lab)

    @classmethod
    def from_probas(cls, hour_id: str, probas, labels=None) -> "HourPredictionBundle":
        """Build from 60 probabilities (None/NaN = missing); labels default to p >= 0.5."""
        p = np.array([np.nan if v is None else v for v in probas], dtype=np.float64)
        if labels is None:
            lab = np.where(np.isnan(p), -1, (p >= 0.5).astype(np.int64))
        else:
            lab = np.array([-1 if v is None else v for v in labels], dtype=np.int64)
        return cls(hour_id, p, lab)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.minute_probas)

    @property
    def n_present(self) -> int:
        return int(self.present.sum())


def _require_minutes(bundle: HourPredictionBundle) -> None:
    if bundle.n_present == 0:
        raise DataError(f"hour {bundle.hour_id!r} has no classified minutes")


def mean_proba(bundle: HourPredictionBundle) -> float:
    _require_minutes(bundle)
    return float(bundle.minute_probas[bundle.present].mean())


def mean_threshold_vote(bundle: HourPredictionBundle, threshold: float = 0.5) -> int:
    """1 iff the mean probability of classified minutes is >= threshold."""
    return int(mean_proba(bundle) >= threshold)


def any_stress_vote(bundle: HourPredictionBundle) -> int:
    """1 iff any classified minute was labelled stress."""
    _require_minutes(bundle)
    return int((bundle.minute_labels == 1).any())


def select_threshold(
    bundles: Sequence[HourPredictionBundle], hour_labels, grid: Sequence[float] = THRESHOLD_GRID
) -> float:
    """Grid threshold maximising hour-level F1 (first maximum wins; undefined F1 ranks last)."""
    usable = [i for i, b in enumerate(bundles) if b.n_present]
    if not usable:
        return 0.5
    means = np.array([mean_proba(bundles[i]) for i in usable])
    truth = np.asarray(hour_labels)[usable]
    best_t, best_f1 = grid[0], -1.0
    for t in grid:
        f1 = compute_metrics((means >= t).astype(np.int64), truth).f1
        score = -1.0 if f1 is None else f1
        if score > best_f1:
            best_t, best_f1 = t, score
    return float(best_t)


def meta_features(bundles: Sequence[HourPredictionBundle]) -> np.ndarray:
    """60 minute labels in order, unclassified minutes set to 0.5."""
    rows = [np.where(b.minute_labels >= 0, b.minute_labels, MISSING_FILL) for b in bundles]
    return np.array(rows, dtype=np.float64).reshape(len(bundles), MINUTES_PER_HOUR)


@dataclass(frozen=True, eq=False)
class MetaVoter:
    model: TrainedModel | None
    fallback_class: int
    degenerate: bool

    def proba(self, bundles: Sequence[HourPredictionBundle]) -> np.ndarray:
        if self.model is None:
            return np.full(len(bundles), float(self.fallback_class))
        return self.model.predict_proba(meta_features(bundles))

    def vote(self, bundles: Sequence[HourPredictionBundle]) -> np.ndarray:
        if self.model is None:
            return np.full(len(bundles), self.fallback_class, dtype=np.int64)
        return self.model.predict(meta_features(bundles))


def lda_meta_vote_fit(
    bundles: Sequence[HourPredictionBundle], hour_labels, spec: ClassifierSpec | None = None
) -> MetaVoter:
    """Fit an LDA on the 60-slot minute-label vectors of training hours.

    A constant feature matrix carries no information; the voter then predicts
    the majority training class and reports itself as degenerate.
    """
    y = np.asarray(hour_labels, dtype=np.int64)
    if len(bundles) < 2 or len(bundles) != y.size:
        raise DataError("meta-voter needs at least 2 training bundles with one label each")
    if np.unique(y).size < 2:
        raise SingleClassError("meta-voter needs both hour classes in training")
    X = meta_features(bundles)
    majority = int(y.mean() >= 0.5)
    if np.all(X == X[0]):
        warnings.warn("meta-voter features are constant; using majority class", RuntimeWarning)
        return MetaVoter(None, majority, True)
    model = fit(spec or ClassifierSpec("lda"), X, y)
    return MetaVoter(model, majority, False)


def lda_meta_vote(voter: MetaVoter, bundle: HourPredictionBundle) -> int:
    return int(voter.vote([bundle])[0])


def group_ensemble_vote(per_group_probas: Mapping[str, float | None]) -> float | None:
    """Unweighted mean over groups that produced a probability; None if none did."""
    vals = [
        float(p) for p in per_group_probas.values()
        if p is not None and not (isinstance(p, float) and np.isnan(p))
    ]
    if not vals:
        return None
    return float(np.mean(vals))


def group_ensemble_matrix(stacked: np.ndarray) -> np.ndarray:
    """Vectorised group_ensemble_vote over axis 0 (groups); NaN = missing."""
    present = ~np.isnan(stacked)
    counts = present.sum(axis=0)
    sums = np.where(present, stacked, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan)
