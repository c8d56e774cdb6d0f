"""Interventional Shapley attributions on the probability scale.

The value of a coalition S is the mean model output over background rows in
which the features in S are overwritten by the explained instance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError

_CHUNK_ROWS = 262_144


@dataclass(frozen=True, eq=False)
class AttributionResult:
    base_value: float
    attributions: np.ndarray
    model_output: float
    instance: np.ndarray
    std_errors: np.ndarray | None = None

    @property
    def residual(self) -> float:
        """Local-accuracy gap: f(x) - base - sum(phi)."""
        return float(self.model_output - self.base_value - self.attributions.sum())


def _as_predictor(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    if callable(model):
        return model
    raise ConfigError("model must expose predict_proba or be callable")


def _check_inputs(instance, background):
    x = np.asarray(instance, dtype=np.float64).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if bg.shape[0] == 0:
        raise DataError("background must contain at least one row")
    if bg.shape[1] != x.size:
        raise DataError(f"background has {bg.shape[1]} columns, instance has {x.size}")
    return x, bg


def coalition_values(f, x: np.ndarray, background: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """v(S) for each boolean coalition row of `masks`."""
    n_bg = background.shape[0]
    out = np.empty(masks.shape[0])
    step = max(1, _CHUNK_ROWS // n_bg)
    for start in range(0, masks.shape[0], step):
        m = masks[start : start + step]
        hybrid = np.where(m[:, None, :], x[None, None, :], background[None, :, :])
        preds = np.asarray(f(hybrid.reshape(-1, x.size)), dtype=np.float64)
        out[start : start + step] = preds.reshape(m.shape[0], n_bg).mean(axis=1)
    return out


def exact_shapley(model, instance, background, max_features: int = 15) -> AttributionResult:
    """Shapley values by enumerating all 2^d coalitions."""
    f = _as_predictor(model)
    x, bg = _check_inputs(instance, background)
    d = x.size
    if d > max_features:
        raise ConfigError(f"exact enumeration limited to {max_features} features, got {d}")
    ids = np.arange(1 << d, dtype=np.int64)
    bits = ((ids[:, None] >> np.arange(d)) & 1).astype(bool)
    v = coalition_values(f, x, bg, bits)
    size = bits.sum(axis=1)
    weight = np.array(
        [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    )
    phi = np.empty(d)
    for i in range(d):
        without = ids[~bits[:, i]]
        phi[i] = np.sum(weight[size[without]] * (v[without | (1 << i)] - v[without]))
    out = float(f(x[None, :])[0])
    return AttributionResult(float(v[0]), phi, out, x)


def sampled_shapley(
    model, instance, background, n_permutations: int = 1000, seed: int = 0
) -> AttributionResult:
    """Monte Carlo over random feature orderings.

    Each ordering contributes one marginal per feature; coalition values are
    computed once per distinct coalition. Because every ordering telescopes
    from v(empty) to v(all), local accuracy holds up to rounding.
    """
    if isinstance(n_permutations, bool) or int(n_permutations) < 1:
        raise ConfigError("n_permutations must be >= 1")
    f = _as_predictor(model)
    x, bg = _check_inputs(instance, background)
    d, P = x.size, int(n_permutations)
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((P, d)), axis=1, kind="stable")
    # prefix coalitions: row k of permutation p holds its first k features
    prefix = np.zeros((P, d + 1, d), dtype=bool)
    rows = np.arange(P)
    for k in range(d):
        prefix[:, k + 1] = prefix[:, k]
        prefix[rows, k + 1, perms[:, k]] = True
    flat = prefix.reshape(-1, d)
    packed = np.packbits(flat, axis=1)
    uniq, first, inverse = np.unique(packed, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)  # evaluate in first-seen order for a stable workload
    v_sorted = coalition_values(f, x, bg, flat[first[order]])
    v_uniq = np.empty(uniq.shape[0])
    v_uniq[order] = v_sorted
    v = v_uniq[inverse.ravel()].reshape(P, d + 1)
    deltas = np.diff(v, axis=1)
    marginals = np.empty((P, d))
    marginals[rows[:, None], perms] = deltas
    phi = marginals.mean(axis=0)
    se = marginals.std(axis=0, ddof=1) / np.sqrt(P) if P > 1 else np.full(d, np.nan)
    out = float(f(x[None, :])[0])
    return AttributionResult(float(v[0, 0]), phi, out, x, se)


@dataclass(frozen=True)
class ImportanceSummary:
    ranking: list[tuple[str, float]]
    points: list[tuple[str, float, float]]


def summarize_importance(results: Sequence[AttributionResult], feature_names: Sequence[str]) -> ImportanceSummary:
    """Mean |phi| per feature, descending (ties keep input order), plus raw (value, phi) points."""
    if not results:
        raise DataError("no attribution results to summarise")
    d = len(feature_names)
    for r in results:
        if r.attributions.size != d or r.instance.size != d:
            raise DataError("attribution dimensionality does not match feature_names")
    phis = np.stack([r.attributions for r in results])
    values = np.stack([r.instance for r in results])
    scores = np.abs(phis).mean(axis=0)
    order = np.argsort(-scores, kind="stable")
    ranking = [(feature_names[j], float(scores[j])) for j in order]
    points = [
        (feature_names[j], float(values[i, j]), float(phis[i, j]))
        for j in range(d)
        for i in range(len(results))
    ]
    return ImportanceSummary(ranking, points)


def write_importance(summary: ImportanceSummary, summary_path, points_path, header_lines=()) -> None:
    for path, cols, rows in (
        (summary_path, ["feature", "mean_abs_phi"], summary.ranking),
        (points_path, ["feature", "feature_value", "phi"], summary.points),
    ):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
