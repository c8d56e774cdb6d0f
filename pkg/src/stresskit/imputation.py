"""Mean and Euclidean-donor imputation over row datasets (minutes or hours).

Imputers are fitted on the training rows only and then applied to any split.
Present values are never modified.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .data_model import MinuteDataset
from .errors import ConfigError, DataError, LayoutMismatchError, UnfittableCoordinateError

METHODS = ("mean", "euclidean")
FALLBACKS = ("mean", "drop")


@dataclass(frozen=True)
class ImputationPolicy:
    method: str = "mean"
    comparator_groups: tuple[str, ...] = ()
    fallback: str = "mean"
    standardize: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "comparator_groups", tuple(self.comparator_groups))
        if self.method not in METHODS:
            raise ConfigError(f"imputation method must be one of {METHODS}, got {self.method!r}")
        if self.fallback not in FALLBACKS:
            raise ConfigError(f"fallback must be one of {FALLBACKS}, got {self.fallback!r}")
        if self.method == "euclidean" and not self.comparator_groups:
            raise ConfigError("euclidean imputation needs at least one comparator group")


@dataclass(frozen=True)
class RemovedRow:
    hour_id: str
    minute_index: int
    reason: str


@dataclass(frozen=True, eq=False)
class MeanImputer:
    layout: tuple
    means: np.ndarray


def fit_mean_imputer(data: MinuteDataset) -> MeanImputer:
    present = data.coordinate_present()
    counts = present.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        names = []
        for j in empty:
            for e in data.layout:
                if e.offset <= j < e.offset + e.dim:
                    names.append(f"{e.name}[{j - e.offset}]")
        raise UnfittableCoordinateError(names)
    sums = np.where(present, data.features, 0.0).sum(axis=0)
    means = sums / counts
    means.flags.writeable = False
    return MeanImputer(data.layout, means)


def apply_mean_imputer(imputer: MeanImputer, data: MinuteDataset) -> MinuteDataset:
    if imputer.layout != data.layout:
        raise LayoutMismatchError("mean imputer was fitted on a different feature layout")
    present = data.coordinate_present()
    if present.all():
        return data
    filled = np.where(present, data.features, imputer.means[None, :])
    return data.replace(filled, np.ones_like(data.present))


def _group_columns(data: MinuteDataset, names: Iterable[str]) -> np.ndarray:
    cols = [np.arange(data.entry(n).offset, data.entry(n).offset + data.entry(n).dim) for n in names]
    return np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)


def _nearest(ref: np.ndarray, queries: np.ndarray, k_probe: int = 8) -> np.ndarray:
    """Exact nearest reference row per query; ties go to the lowest reference index."""
    tree = cKDTree(ref)
    k = min(k_probe, ref.shape[0])
    dist, idx = tree.query(queries, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    out = np.empty(queries.shape[0], dtype=np.int64)
    for i in range(queries.shape[0]):
        tied = idx[i][dist[i] == dist[i, 0]]
        if tied.size == k and k < ref.shape[0]:
            # every probe tied; settle it by an exhaustive scan
            d = np.sqrt(((ref - queries[i]) ** 2).sum(axis=1))
            d0 = np.sqrt(((ref[tied[0]] - queries[i]) ** 2).sum())
            tied = np.flatnonzero(d <= d0)
        out[i] = tied.min()
    return out


def euclidean_impute(
    data: MinuteDataset,
    reference: MinuteDataset,
    policy: ImputationPolicy,
) -> tuple[MinuteDataset, list[RemovedRow]]:
    """Fill each missing group from the most similar reference row.

    Similarity is Euclidean distance over the comparator groups present in the
    query row; the donor must have those groups and the missing group present.
    Rows without any comparator, or with no eligible donor, follow
    `policy.fallback`: "mean" fills from reference column means, "drop" removes
    the row and lists it in the returned removal manifest.
    """
    if policy.method != "euclidean":
        raise ConfigError("euclidean_impute requires policy.method == 'euclidean'")
    if data.layout != reference.layout:
        raise LayoutMismatchError("data and reference have different feature layouts")
    names = data.group_names
    missing_cmp = [g for g in policy.comparator_groups if g not in names]
    if missing_cmp:
        raise ConfigError(f"comparator groups not in layout: {missing_cmp}")
    if not reference.complete_rows().any():
        raise DataError("reference needs at least one row complete in every group")

    gidx = {g: k for k, g in enumerate(names)}
    cmp_idx = [gidx[g] for g in names if g in policy.comparator_groups]
    features = np.array(data.features)
    present = np.array(data.present)
    needs_fallback = np.zeros(len(data), bool)

    ref_feats = reference.features
    scale_mean = np.zeros(data.n_features)
    scale_std = np.ones(data.n_features)
    if policy.standardize:
        cp = reference.coordinate_present()
        cnt = np.maximum(cp.sum(axis=0), 1)
        scale_mean = np.where(cp, ref_feats, 0).sum(axis=0) / cnt
        var = np.where(cp, (ref_feats - scale_mean) ** 2, 0).sum(axis=0) / cnt
        scale_std = np.where(var > 0, np.sqrt(var), 1.0)

    incomplete = np.flatnonzero(~data.present.all(axis=1))
    # bucket rows by their presence pattern so each bucket shares a donor pool
    patterns: dict[tuple, list[int]] = {}
    for i in incomplete:
        patterns.setdefault(tuple(data.present[i]), []).append(i)

    for pattern in sorted(patterns):
        rows = np.array(patterns[pattern])
        usable = [k for k in cmp_idx if pattern[k]]
        if not usable:
            needs_fallback[rows] = True
            continue
        cols = _group_columns(data, [names[k] for k in usable])
        q = (data.features[np.ix_(rows, cols)] - scale_mean[cols]) / scale_std[cols]
        for k, have in enumerate(pattern):
            if have:
                continue
            eligible = reference.present[:, usable].all(axis=1) & reference.present[:, k]
            pool = np.flatnonzero(eligible)
            if pool.size == 0:
                needs_fallback[rows] = True
                continue
            r = (ref_feats[np.ix_(pool, cols)] - scale_mean[cols]) / scale_std[cols]
            donors = pool[_nearest(r, q)]
            e = data.layout[k]
            features[rows, e.offset : e.offset + e.dim] = ref_feats[donors, e.offset : e.offset + e.dim]
            present[rows, k] = True

    removed: list[RemovedRow] = []
    keep = np.ones(len(data), bool)
    fb_rows = np.flatnonzero(needs_fallback & ~present.all(axis=1))
    if fb_rows.size:
        if policy.fallback == "mean":
            imputer = fit_mean_imputer(reference)
            coord = np.repeat(present[fb_rows], [e.dim for e in data.layout], axis=1)
            features[fb_rows] = np.where(coord, features[fb_rows], imputer.means[None, :])
            present[fb_rows] = True
        else:
            for i in fb_rows:
                reason = "no comparator group present" if not present[i, cmp_idx].any() else "no eligible donor"
                removed.append(RemovedRow(str(data.hour_ids[i]), int(data.minute_index[i]), reason))
            keep[fb_rows] = False

    out = MinuteDataset(
        features, present, data.labels, data.hour_ids, data.minute_index, data.layout
    )
    if not keep.all():
        out = out.take(np.flatnonzero(keep))
    return out, removed


def write_removal_manifest(path, removed: Sequence[RemovedRow], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour_id", "minute_index", "reason"])
        for r in removed:
            w.writerow([r.hour_id, r.minute_index, r.reason])


def impute(train: MinuteDataset, data: MinuteDataset, policy: ImputationPolicy):
    """Apply `policy` to `data` using statistics/donors from `train` only."""
    if policy.method == "mean":
        return apply_mean_imputer(fit_mean_imputer(train), data), []
    return euclidean_impute(data, train, policy)
