from __future__ import annotations

import numpy as np
import pytest

from stresskit.data_model import DatasetSplit, FeatureManifest, HourInstance
from stresskit.synth_gen import GenConfig, generate

SMALL_MANIFEST = FeatureManifest((("ecg_hc", 8), ("gsr_hc", 12), ("ecg_c", 4), ("ecg_t", 3)))


def make_hour(hour_id, label, manifest, rng, missing=None):
    """Random hour; `missing` maps group -> iterable of minute indices to blank out."""
    values, present = {}, {}
    for g in manifest.groups:
        values[g.name] = rng.normal(size=(60, g.dim))
        p = np.ones(60, bool)
        for m in (missing or {}).get(g.name, ()):
            p[m] = False
        present[g.name] = p
    return HourInstance(hour_id, label, values, present)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_manifest():
    return SMALL_MANIFEST


@pytest.fixture
def small_split(rng):
    hours = [
        make_hour("h0", 0, SMALL_MANIFEST, rng),
        make_hour("h1", 1, SMALL_MANIFEST, rng, {"ecg_hc": range(7), "gsr_hc": range(60)}),
        make_hour("h2", 1, SMALL_MANIFEST, rng, {g.name: range(60) for g in SMALL_MANIFEST.groups}),
    ]
    return DatasetSplit("train", hours, SMALL_MANIFEST)


@pytest.fixture(scope="session")
def generated_small():
    cfg = GenConfig(n_train_hours=80, n_test_hours=40, separation=1.5, seed=7)
    return generate(cfg, SMALL_MANIFEST)
