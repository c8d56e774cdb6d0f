"""SMILE-shaped synthetic data with planted signal, missingness and covariate shift.

Each hour carries one label. Inside a stress hour a contiguous block of
ceil(rho * 60) minutes draws the informative coordinates of every group from
N(separation, 1); everything else is N(0, 1). Informative coordinates are the
first ceil(informative_frac * dim) of each group.

Missingness targets are marginal totals, as in SMILE's missing-data table:
an hour counted as "fully missing" for a group includes the hours that are
empty in every group, and the per-minute rate includes both. Counts are drawn
as exact subsets (not Bernoulli) so small splits still land on the targets.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data_model import MINUTES_PER_HOUR, DatasetSplit, FeatureManifest, HourInstance
from .errors import ConfigError

DEFAULT_MISSING_RATES = {
    "ecg_hc": (0.1175, 0.1096),
    "gsr_hc": (0.1259, 0.1222),
    "ecg_c": (0.2067, 0.0956),
    "ecg_t": (0.2067, 0.0956),
}
DEFAULT_EMPTY_HOUR_RATE = (19 / 2070, 2 / 986)


@dataclass(frozen=True)
class GenConfig:
    n_train_hours: int = 500
    n_test_hours: int = 200
    prevalence: float = 0.5
    separation: float = 1.0
    informative_frac: float = 0.5
    stress_minute_frac: float = 0.5
    # group -> (fraction of minutes missing, fraction of hours missing entirely)
    missing_rates: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_MISSING_RATES)
    )
    # (train, test) probability that an hour has no data in any group
    empty_hour_rate: tuple[float, float] = DEFAULT_EMPTY_HOUR_RATE
    # group -> offset (scalar or one value per coordinate), test split only
    shift: Mapping[str, float | Sequence[float]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_train_hours", "n_test_hours"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer")
        for name in ("prevalence", "informative_frac", "stress_minute_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not self.separation >= 0:
            raise ConfigError("separation must be >= 0")
        rates = {k: tuple(float(x) for x in v) for k, v in self.missing_rates.items()}
        for g, (minute_rate, hour_rate) in rates.items():
            if not (0 <= minute_rate <= 1 and 0 <= hour_rate <= 1):
                raise ConfigError(f"missing rates for {g!r} must lie in [0, 1]")
            if minute_rate < hour_rate:
                raise ConfigError(
                    f"{g!r}: minute missing rate {minute_rate} is below its full-hour rate "
                    f"{hour_rate}; fully missing hours already contribute their minutes"
                )
        empty = tuple(float(x) for x in self.empty_hour_rate)
        if len(empty) != 2 or not all(0 <= e <= 1 for e in empty):
            raise ConfigError("empty_hour_rate must be a (train, test) pair in [0, 1]")
        object.__setattr__(self, "missing_rates", rates)
        object.__setattr__(self, "empty_hour_rate", empty)
        object.__setattr__(self, "shift", dict(self.shift))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["missing_rates"] = {k: list(v) for k, v in self.missing_rates.items()}
        d["empty_hour_rate"] = list(self.empty_hour_rate)
        d["shift"] = {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in self.shift.items()}
        return d

    @classmethod
    def from_dict(cls, obj: Mapping) -> "GenConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown generator option(s): {sorted(unknown)}")
        kw = dict(obj)
        if "missing_rates" in kw:
            kw["missing_rates"] = {k: tuple(v) for k, v in kw["missing_rates"].items()}
        if "empty_hour_rate" in kw:
            kw["empty_hour_rate"] = tuple(kw["empty_hour_rate"])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GenConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class TruthTable:
    """Per-minute ground truth: state 1 where the stress distribution was expressed."""

    hour_id: np.ndarray
    minute_index: np.ndarray
    state: np.ndarray

    def stress_minutes(self, hour_id: str) -> np.ndarray:
        rows = self.hour_id == hour_id
        return self.minute_index[rows][self.state[rows] == 1]

    def to_csv(self, path: str | os.PathLike, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour_id", "minute_index", "state"])
            for h, m, s in zip(self.hour_id, self.minute_index, self.state):
                w.writerow([h, int(m), int(s)])


def informative_counts(config: GenConfig, manifest: FeatureManifest) -> dict[str, int]:
    return {g.name: math.ceil(config.informative_frac * g.dim - 1e-9) for g in manifest.groups}


def informative_mask(config: GenConfig, manifest: FeatureManifest, groups=None) -> np.ndarray:
    """Boolean mask over the concatenated layout marking signal-carrying coordinates."""
    counts = informative_counts(config, manifest)
    parts = []
    for e in manifest.layout(groups):
        m = np.zeros(e.dim, bool)
        m[: counts[e.name]] = True
        parts.append(m)
    return np.concatenate(parts)


def _shift_vector(config: GenConfig, name: str, dim: int) -> np.ndarray:
    if name not in config.shift:
        return np.zeros(dim)
    s = np.asarray(config.shift[name], dtype=np.float64)
    if s.ndim == 0:
        return np.full(dim, float(s))
    if s.shape != (dim,):
        raise ConfigError(f"shift for {name!r} must be a scalar or have length {dim}")
    return s


def _exact_subset(rng: np.random.Generator, pool: np.ndarray, k: int) -> np.ndarray:
    k = max(0, min(k, pool.size))
    if k == 0:
        return pool[:0]
    return rng.choice(pool, size=k, replace=False)


def _generate_split(
    config: GenConfig,
    manifest: FeatureManifest,
    split_name: str,
    n_hours: int,
    empty_rate: float,
    rng: np.random.Generator,
):
    n_min = MINUTES_PER_HOUR
    labels = (rng.random(n_hours) < config.prevalence).astype(np.int64)
    block = math.ceil(config.stress_minute_frac * n_min - 1e-9)
    state = np.zeros((n_hours, n_min), dtype=np.int64)
    starts = rng.integers(0, n_min - block + 1, size=n_hours)
    if block > 0:
        for h in np.flatnonzero(labels):
            state[h, starts[h] : starts[h] + block] = 1

    counts = informative_counts(config, manifest)
    values = {}
    for g in manifest.groups:
        v = rng.standard_normal((n_hours, n_min, g.dim))
        k = counts[g.name]
        if k and config.separation:
            v[:, :, :k] += config.separation * state[:, :, None]
        if split_name == "test":
            v += _shift_vector(config, g.name, g.dim)
        values[g.name] = v

    # Empty hours are drawn first so the per-group totals below can include them.
    empty = np.zeros(n_hours, bool)
    empty[_exact_subset(rng, np.arange(n_hours), round(empty_rate * n_hours))] = True
    present = {}
    for g in manifest.groups:
        minute_rate, hour_rate = config.missing_rates.get(g.name, (0.0, 0.0))
        dropped = empty.copy()
        extra = round(hour_rate * n_hours) - int(empty.sum())
        dropped[_exact_subset(rng, np.flatnonzero(~dropped), extra)] = True
        p = np.repeat(~dropped[:, None], n_min, axis=1)
        remaining = round(minute_rate * n_hours * n_min) - int((~p).sum())
        cells = _exact_subset(rng, np.flatnonzero(p.ravel()), remaining)
        p.ravel()[cells] = False
        present[g.name] = p

    prefix = "tr" if split_name == "train" else "te"
    instances = []
    for h in range(n_hours):
        instances.append(
            HourInstance(
                f"{prefix}{h:05d}",
                int(labels[h]),
                {g: values[g][h] for g in values},
                {g: present[g][h] for g in present},
            )
        )
    split = DatasetSplit(split_name, tuple(instances), manifest)
    ids = np.repeat(np.array([i.hour_id for i in instances], dtype=object), n_min)
    return split, ids, np.tile(np.arange(n_min), n_hours), state.ravel()


def generate(config: GenConfig, manifest: FeatureManifest | None = None):
    """Return (train, test, truth). Identical config and seed give identical output."""
    manifest = manifest or FeatureManifest.default()
    unknown = (set(config.missing_rates) | set(config.shift)) - set(manifest.names)
    if unknown:
        raise ConfigError(f"generator config names groups not in the manifest: {sorted(unknown)}")
    seq = np.random.SeedSequence(int(config.seed) & 0xFFFFFFFFFFFFFFFF)
    train_seq, test_seq = seq.spawn(2)
    train, ids_a, min_a, st_a = _generate_split(
        config, manifest, "train", config.n_train_hours, config.empty_hour_rate[0],
        np.random.default_rng(train_seq),
    )
    test, ids_b, min_b, st_b = _generate_split(
        config, manifest, "test", config.n_test_hours, config.empty_hour_rate[1],
        np.random.default_rng(test_seq),
    )
    truth = TruthTable(
        np.concatenate([ids_a, ids_b]),
        np.concatenate([min_a, min_b]),
        np.concatenate([st_a, st_b]),
    )
    return train, test, truth


def missing_rates(split: DatasetSplit) -> dict[str, tuple[float, float]]:
    """Observed (minute, full-hour) missing fractions per group."""
    out = {}
    n = len(split)
    for name in split.manifest.names:
        if n == 0:
            out[name] = (0.0, 0.0)
            continue
        p = np.stack([h.present[name] for h in split.instances])
        out[name] = (float((~p).mean()), float((~p.any(axis=1)).mean()))
    return out
