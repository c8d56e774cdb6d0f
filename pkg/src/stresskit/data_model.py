"""Dataset schema: feature manifests, labelled hours, per-minute and hourly views.

Missingness is always carried by an explicit boolean mask per (minute, group).
Feature arrays additionally hold NaN at missing positions so that an unmasked
reduction fails loudly instead of silently averaging a sentinel.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DuplicateHourError,
    ManifestMismatchError,
    ParseError,
    UnknownGroupError,
)

MINUTES_PER_HOUR = 60
DEFAULT_DEEP_DIM = 64
HANDCRAFTED_GROUPS = ("ecg_hc", "gsr_hc")
SPLIT_NAMES = ("train", "test")


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    dim: int


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    offset: int
    dim: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.dim)


@dataclass(frozen=True)
class FeatureManifest:
    """Ordered feature groups and their per-minute dimensionalities."""

    groups: tuple[FeatureGroup, ...]

    def __post_init__(self) -> None:
        groups = tuple(
            g if isinstance(g, FeatureGroup) else FeatureGroup(*g) for g in self.groups
        )
        object.__setattr__(self, "groups", groups)
        seen = set()
        for g in groups:
            if not isinstance(g.name, str) or not g.name.isidentifier():
                raise ConfigError(f"group name must be a non-empty identifier, got {g.name!r}")
            if g.name in seen:
                raise ConfigError(f"duplicate group name {g.name!r}")
            seen.add(g.name)
            if isinstance(g.dim, bool) or not isinstance(g.dim, (int, np.integer)) or g.dim < 1:
                raise ConfigError(f"group {g.name!r} must have dim >= 1, got {g.dim!r}")

    @classmethod
    def default(cls, deep_dim_c: int = DEFAULT_DEEP_DIM, deep_dim_t: int = DEFAULT_DEEP_DIM):
        return cls(
            (
                FeatureGroup("ecg_hc", 8),
                FeatureGroup("gsr_hc", 12),
                FeatureGroup("ecg_c", deep_dim_c),
                FeatureGroup("ecg_t", deep_dim_t),
            )
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def dim(self, name: str) -> int:
        for g in self.groups:
            if g.name == name:
                return g.dim
        raise UnknownGroupError(f"unknown feature group {name!r}")

    def resolve(self, groups: Iterable[str] | None = None) -> tuple[str, ...]:
        """Validate a group selection and return it in manifest order (None = all)."""
        if groups is None:
            return self.names
        wanted = list(groups)
        if not wanted:
            raise ConfigError("at least one feature group must be selected")
        unknown = [g for g in wanted if g not in self.names]
        if unknown:
            raise UnknownGroupError(f"unknown feature group(s): {unknown}")
        return tuple(n for n in self.names if n in wanted)

    def layout(self, groups: Iterable[str] | None = None) -> tuple[LayoutEntry, ...]:
        entries, offset = [], 0
        for name in self.resolve(groups):
            d = self.dim(name)
            entries.append(LayoutEntry(name, offset, d))
            offset += d
        return tuple(entries)

    def to_dict(self) -> dict:
        return {"groups": [{"name": g.name, "dim": int(g.dim)} for g in self.groups]}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "FeatureManifest":
        try:
            return cls(tuple(FeatureGroup(g["name"], g["dim"]) for g in obj["groups"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed manifest: {exc!r}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FeatureManifest":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"manifest {path}: {exc}") from None
        return cls.from_dict(obj)

    def save(self, path: str | os.PathLike, meta: Mapping | None = None) -> None:
        obj = self.to_dict()
        if meta is not None:
            obj["_meta"] = meta
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=False)
            fh.write("\n")


@dataclass(frozen=True)
class MinuteRecord:
    """One minute of an hour; a group maps to None when it is missing."""

    minute_index: int
    vectors: Mapping[str, np.ndarray | None]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class HourInstance:
    """One labelled hour: per group a (60, dim) value block plus a (60,) presence mask."""

    hour_id: str
    label: int
    values: Mapping[str, np.ndarray]
    present: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        if not isinstance(self.hour_id, str) or not self.hour_id:
            raise DataError("hour_id must be a non-empty string")
        if isinstance(self.label, bool) or self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if set(self.values) != set(self.present):
            raise DataError("values and present must cover the same groups")
        values, present = {}, {}
        for name in self.values:
            v = np.array(self.values[name], dtype=np.float64)
            p = np.array(self.present[name], dtype=bool)
            if v.ndim != 2 or v.shape[0] != MINUTES_PER_HOUR:
                raise DataError(f"group {name!r}: values must have shape (60, dim)")
            if p.shape != (MINUTES_PER_HOUR,):
                raise DataError(f"group {name!r}: presence mask must have shape (60,)")
            if not np.isfinite(v[p]).all():
                raise DataError(f"group {name!r}: present vectors must be finite")
            v[~p] = np.nan
            values[name] = _readonly(v)
            present[name] = _readonly(p)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "present", present)

    @classmethod
    def from_minutes(
        cls,
        hour_id: str,
        label: int,
        minutes: Sequence[Mapping[str, Sequence[float] | None]],
        manifest: FeatureManifest,
    ) -> "HourInstance":
        if len(minutes) != MINUTES_PER_HOUR:
            raise DataError(f"hour {hour_id!r} has {len(minutes)} minutes, expected 60")
        values, present = {}, {}
        for g in manifest.groups:
            v = np.full((MINUTES_PER_HOUR, g.dim), np.nan)
            p = np.zeros(MINUTES_PER_HOUR, dtype=bool)
            for m, rec in enumerate(minutes):
                vec = rec.get(g.name)
                if vec is None:
                    continue
                vec = np.asarray(vec, dtype=np.float64)
                if vec.shape != (g.dim,):
                    raise ManifestMismatchError(
                        f"hour {hour_id!r} minute {m} group {g.name!r}: "
                        f"expected length {g.dim}, got {vec.size}"
                    )
                v[m] = vec
                p[m] = True
            values[g.name], present[g.name] = v, p
        return cls(hour_id, label, values, present)

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(self.values)

    @property
    def minutes(self) -> tuple[MinuteRecord, ...]:
        return tuple(
            MinuteRecord(
                m,
                {
                    g: (self.values[g][m] if self.present[g][m] else None)
                    for g in self.values
                },
            )
            for m in range(MINUTES_PER_HOUR)
        )

    def is_empty(self) -> bool:
        return not any(p.any() for p in self.present.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HourInstance):
            return NotImplemented
        if (self.hour_id, self.label) != (other.hour_id, other.label):
            return False
        if list(self.values) != list(other.values):
            return False
        for g in self.values:
            p = self.present[g]
            if not np.array_equal(p, other.present[g]):
                return False
            if not np.array_equal(self.values[g][p], other.values[g][p]):
                return False
        return True

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    split_name: str
    instances: tuple[HourInstance, ...]
    manifest: FeatureManifest

    def __post_init__(self) -> None:
        if self.split_name not in SPLIT_NAMES:
            raise DataError(f"split_name must be one of {SPLIT_NAMES}, got {self.split_name!r}")
        instances = tuple(self.instances)
        object.__setattr__(self, "instances", instances)
        seen = set()
        names = self.manifest.names
        for inst in instances:
            if inst.hour_id in seen:
                raise DuplicateHourError(f"duplicate hour_id {inst.hour_id!r}")
            seen.add(inst.hour_id)
            if inst.group_names != names:
                raise ManifestMismatchError(
                    f"hour {inst.hour_id!r} groups {inst.group_names} != manifest {names}"
                )
            for g in self.manifest.groups:
                if inst.values[g.name].shape[1] != g.dim:
                    raise ManifestMismatchError(
                        f"hour {inst.hour_id!r} group {g.name!r} has dim "
                        f"{inst.values[g.name].shape[1]}, manifest says {g.dim}"
                    )

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def labels(self) -> np.ndarray:
        return np.array([h.label for h in self.instances], dtype=np.int64)

    @property
    def hour_ids(self) -> list[str]:
        return [h.hour_id for h in self.instances]

    def subset(self, indices: Iterable[int]) -> "DatasetSplit":
        return DatasetSplit(
            self.split_name, tuple(self.instances[i] for i in indices), self.manifest
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.split_name == other.split_name
            and self.manifest == other.manifest
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.instances, other.instances))
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class MinuteDataset:
    """Row-oriented view used by imputers and classifiers.

    Rows are minutes (minute_index 0..59) or whole hours (minute_index -1).
    `present[i, k]` tells whether group `layout[k]` is available on row i.
    """

    features: np.ndarray
    present: np.ndarray
    labels: np.ndarray
    hour_ids: np.ndarray
    minute_index: np.ndarray
    layout: tuple[LayoutEntry, ...]

    def __post_init__(self) -> None:
        n = len(self.labels)
        width = sum(e.dim for e in self.layout)
        feats = np.array(self.features, dtype=np.float64).reshape(n, width)
        pres = np.array(self.present, dtype=bool).reshape(n, len(self.layout))
        labels = np.asarray(self.labels, dtype=np.int64)
        hour_ids = np.asarray(self.hour_ids, dtype=object)
        minute_index = np.asarray(self.minute_index, dtype=np.int64)
        if hour_ids.shape != (n,) or minute_index.shape != (n,):
            raise DataError("hour_ids and minute_index must have one entry per row")
        coord = np.repeat(pres, [e.dim for e in self.layout], axis=1)
        if not np.isfinite(feats[coord]).all():
            raise DataError("present feature values must be finite")
        feats[~coord] = np.nan
        for name, arr in (
            ("features", feats),
            ("present", pres),
            ("labels", labels),
            ("hour_ids", hour_ids),
            ("minute_index", minute_index),
        ):
            object.__setattr__(self, name, _readonly(arr))
        object.__setattr__(self, "layout", tuple(self.layout))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.layout)

    def entry(self, name: str) -> LayoutEntry:
        for e in self.layout:
            if e.name == name:
                return e
        raise UnknownGroupError(f"group {name!r} not in layout")

    def coordinate_present(self) -> np.ndarray:
        return np.repeat(self.present, [e.dim for e in self.layout], axis=1)

    def complete_rows(self) -> np.ndarray:
        return self.present.all(axis=1)

    def is_complete(self) -> bool:
        return bool(self.present.all())

    def take(self, rows) -> "MinuteDataset":
        rows = np.asarray(rows)
        return MinuteDataset(
            self.features[rows],
            self.present[rows],
            self.labels[rows],
            self.hour_ids[rows],
            self.minute_index[rows],
            self.layout,
        )

    def replace(self, features: np.ndarray, present: np.ndarray) -> "MinuteDataset":
        return MinuteDataset(
            features, present, self.labels, self.hour_ids, self.minute_index, self.layout
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MinuteDataset):
            return NotImplemented
        return (
            self.layout == other.layout
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.features, other.features, equal_nan=True)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.hour_ids, other.hour_ids)
            and np.array_equal(self.minute_index, other.minute_index)
        )

    __hash__ = None  # type: ignore[assignment]


def _stack_group(split: DatasetSplit, name: str):
    dim = split.manifest.dim(name)
    if not len(split):
        return np.empty((0, MINUTES_PER_HOUR, dim)), np.empty((0, MINUTES_PER_HOUR), bool)
    values = np.stack([h.values[name] for h in split.instances])
    present = np.stack([h.present[name] for h in split.instances])
    return values, present


def explode_to_minutes(
    split: DatasetSplit, groups: Iterable[str] | None = None, require_complete: bool = False
) -> MinuteDataset:
    """One row per minute, selected groups concatenated in manifest order."""
    layout = split.manifest.layout(groups)
    n_hours = len(split)
    blocks, masks = [], []
    for e in layout:
        v, p = _stack_group(split, e.name)
        blocks.append(v.reshape(n_hours * MINUTES_PER_HOUR, e.dim))
        masks.append(p.reshape(n_hours * MINUTES_PER_HOUR))
    width = sum(e.dim for e in layout)
    features = np.concatenate(blocks, axis=1) if blocks else np.empty((0, width))
    present = np.stack(masks, axis=1)
    labels = np.repeat(split.labels, MINUTES_PER_HOUR)
    hour_ids = np.repeat(np.array(split.hour_ids, dtype=object), MINUTES_PER_HOUR)
    minute_index = np.tile(np.arange(MINUTES_PER_HOUR), n_hours)
    data = MinuteDataset(features, present, labels, hour_ids, minute_index, layout)
    if require_complete:
        data = data.take(np.flatnonzero(data.complete_rows()))
    return data


def hourly_vector(instance: HourInstance, groups: Iterable[str]) -> np.ma.MaskedArray | None:
    """Per-group mean over the minutes where that group is present.

    Groups absent for the whole hour are masked; None when every selected
    group is absent.
    """
    wanted = list(groups)
    if not wanted:
        raise ConfigError("at least one feature group must be selected")
    unknown = [g for g in wanted if g not in instance.values]
    if unknown:
        raise UnknownGroupError(f"unknown feature group(s): {unknown}")
    parts, masks = [], []
    for name in instance.values:
        if name not in wanted:
            continue
        p = instance.present[name]
        dim = instance.values[name].shape[1]
        if p.any():
            parts.append(instance.values[name][p].sum(axis=0) / p.sum())
            masks.append(np.zeros(dim, bool))
        else:
            parts.append(np.zeros(dim))
            masks.append(np.ones(dim, bool))
    mask = np.concatenate(masks)
    if mask.all():
        return None
    return np.ma.MaskedArray(np.concatenate(parts), mask=mask)


def hourly_dataset(split: DatasetSplit, groups: Iterable[str] | None = None) -> MinuteDataset:
    """One row per hour built from `hourly_vector`; minute_index is -1."""
    layout = split.manifest.layout(groups)
    n_hours = len(split)
    blocks, masks = [], []
    for e in layout:
        v, p = _stack_group(split, e.name)
        counts = p.sum(axis=1)
        sums = np.where(p[..., None], v, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = sums / counts[:, None]
        blocks.append(means)
        masks.append(counts > 0)
    width = sum(e.dim for e in layout)
    features = np.concatenate(blocks, axis=1) if blocks else np.empty((0, width))
    return MinuteDataset(
        features,
        np.stack(masks, axis=1) if masks else np.empty((0, 0), bool),
        split.labels,
        np.array(split.hour_ids, dtype=object),
        np.full(n_hours, -1),
        layout,
    )


# -- JSONL persistence -------------------------------------------------------


def _hour_to_json(inst: HourInstance, split_name: str) -> str:
    minutes = []
    for m in range(MINUTES_PER_HOUR):
        minutes.append(
            {
                g: (inst.values[g][m].tolist() if inst.present[g][m] else None)
                for g in inst.values
            }
        )
    record = {"hour_id": inst.hour_id, "split": split_name, "label": inst.label, "minutes": minutes}
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def save_dataset(split: DatasetSplit, path: str | os.PathLike, meta: Mapping | None = None) -> None:
    """Write one JSON object per hour. `meta`, if given, becomes a leading `_meta` line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True, separators=(",", ":")) + "\n")
        for inst in split.instances:
            fh.write(_hour_to_json(inst, split.split_name))
            fh.write("\n")


def _parse_hour(obj, manifest: FeatureManifest, lineno: int) -> tuple[str, HourInstance]:
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", lineno)
    for key in ("hour_id", "label", "minutes"):
        if key not in obj:
            raise ParseError(f"missing field {key!r}", lineno)
    hour_id, label, minutes = obj["hour_id"], obj["label"], obj["minutes"]
    split_name = obj.get("split")
    if not isinstance(hour_id, str) or not hour_id:
        raise ParseError("hour_id must be a non-empty string", lineno)
    if isinstance(label, bool) or label not in (0, 1):
        raise ParseError(f"label must be 0 or 1, got {label!r}", lineno)
    if not isinstance(minutes, list) or len(minutes) != MINUTES_PER_HOUR:
        raise ParseError("minutes must be a list of exactly 60 entries", lineno)
    values, present = {}, {}
    names = set(manifest.names)
    for g in manifest.groups:
        values[g.name] = np.full((MINUTES_PER_HOUR, g.dim), np.nan)
        present[g.name] = np.zeros(MINUTES_PER_HOUR, bool)
    for m, rec in enumerate(minutes):
        if not isinstance(rec, dict):
            raise ParseError(f"minute {m} must be an object", lineno)
        extra = set(rec) - names
        if extra:
            raise ManifestMismatchError(f"minute {m}: unknown group(s) {sorted(extra)}", lineno)
        for g in manifest.groups:
            vec = rec.get(g.name)
            if vec is None:
                continue
            if not isinstance(vec, list) or len(vec) != g.dim:
                got = len(vec) if isinstance(vec, list) else type(vec).__name__
                raise ManifestMismatchError(
                    f"minute {m} group {g.name!r}: expected length {g.dim}, got {got}", lineno
                )
            try:
                arr = np.array(vec, dtype=np.float64)
            except (TypeError, ValueError):
                raise ParseError(f"minute {m} group {g.name!r}: non-numeric value", lineno) from None
            if not np.isfinite(arr).all():
                raise ParseError(f"minute {m} group {g.name!r}: non-finite value", lineno)
            values[g.name][m] = arr
            present[g.name][m] = True
    return split_name, HourInstance(hour_id, label, values, present)


def load_dataset(
    path: str | os.PathLike, manifest: FeatureManifest, split_name: str | None = None
) -> DatasetSplit:
    """Read a JSONL dataset file and validate it against `manifest`."""
    instances, seen = [], set()
    found_split = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
            if isinstance(obj, dict) and set(obj) == {"_meta"}:
                continue
            rec_split, inst = _parse_hour(obj, manifest, lineno)
            if inst.hour_id in seen:
                raise DuplicateHourError(f"duplicate hour_id {inst.hour_id!r}", lineno)
            seen.add(inst.hour_id)
            if rec_split is not None:
                if rec_split not in SPLIT_NAMES:
                    raise ParseError(f"unknown split {rec_split!r}", lineno)
                if found_split is None:
                    found_split = rec_split
                elif rec_split != found_split:
                    raise ParseError(
                        f"split {rec_split!r} conflicts with earlier {found_split!r}", lineno
                    )
            instances.append(inst)
    name = split_name or found_split or "train"
    if split_name is not None and found_split is not None and split_name != found_split:
        raise DataError(f"file holds split {found_split!r}, caller asked for {split_name!r}")
    return DatasetSplit(name, tuple(instances), manifest)
