from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import SMALL_MANIFEST
from stresskit.classifiers import ClassifierSpec, fit
from stresskit.data_model import hourly_dataset, save_dataset
from stresskit.errors import ConfigError
from stresskit.synth_gen import (
    DEFAULT_MISSING_RATES,
    GenConfig,
    generate,
    informative_mask,
    missing_rates,
)

NO_MISSING = {g: (0.0, 0.0) for g in DEFAULT_MISSING_RATES}


def test_default_rates_match_reference_table():
    assert GenConfig().missing_rates == {
        "ecg_hc": (0.1175, 0.1096),
        "gsr_hc": (0.1259, 0.1222),
        "ecg_c": (0.2067, 0.0956),
        "ecg_t": (0.2067, 0.0956),
    }
    assert GenConfig().empty_hour_rate == (19 / 2070, 2 / 986)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_train_hours": -1},
        {"prevalence": 1.5},
        {"separation": -0.1},
        {"stress_minute_frac": -0.2},
        {"missing_rates": {"ecg_hc": (0.05, 0.10)}},
        {"empty_hour_rate": (0.1,)},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        GenConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = GenConfig(n_train_hours=3, shift={"ecg_hc": [1.0] * 8}, seed=99)
    assert GenConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"bogus": 1})


def test_same_seed_gives_identical_bytes(tmp_path):
    cfg = GenConfig(n_train_hours=20, n_test_hours=10, seed=5)
    paths = []
    for run in range(2):
        train, test, truth = generate(cfg, SMALL_MANIFEST)
        p = tmp_path / f"r{run}"
        p.mkdir()
        save_dataset(train, p / "train.jsonl")
        save_dataset(test, p / "test.jsonl")
        truth.to_csv(p / "truth.csv")
        paths.append(p)
    for name in ("train.jsonl", "test.jsonl", "truth.csv"):
        assert (paths[0] / name).read_bytes() == (paths[1] / name).read_bytes()


def test_different_seed_differs():
    a = generate(GenConfig(n_train_hours=5, n_test_hours=0, seed=1), SMALL_MANIFEST)[0]
    b = generate(GenConfig(n_train_hours=5, n_test_hours=0, seed=2), SMALL_MANIFEST)[0]
    assert a != b


def test_zero_hours_is_valid():
    train, test, truth = generate(GenConfig(n_train_hours=0, n_test_hours=0), SMALL_MANIFEST)
    assert len(train) == len(test) == 0
    assert truth.state.size == 0


@pytest.mark.parametrize("rho", [0.0, 0.1, 0.5, 0.77, 1.0])
def test_truth_table_marks_contiguous_block(rho):
    cfg = GenConfig(n_train_hours=30, n_test_hours=10, stress_minute_frac=rho, seed=3)
    train, test, truth = generate(cfg, SMALL_MANIFEST)
    block = math.ceil(rho * 60 - 1e-9)
    for split in (train, test):
        for h in split:
            minutes = truth.stress_minutes(h.hour_id)
            if h.label == 0:
                assert minutes.size == 0
            else:
                assert minutes.size == block
                if block:
                    assert np.array_equal(minutes, np.arange(minutes[0], minutes[0] + block))


def test_rates_at_default_scale_hit_targets():
    train, test, _ = generate(GenConfig(n_train_hours=500, n_test_hours=200, seed=11))
    observed = missing_rates(train)
    for g, (minute_rate, hour_rate) in DEFAULT_MISSING_RATES.items():
        assert abs(observed[g][0] - minute_rate) <= 0.015
        assert abs(observed[g][1] - hour_rate) <= 0.015
    empty = sum(h.is_empty() for h in train)
    assert empty == round(500 * 19 / 2070)


def test_shift_only_touches_test_split():
    base = GenConfig(n_train_hours=40, n_test_hours=40, missing_rates=NO_MISSING,
                     empty_hour_rate=(0, 0), seed=4)
    shifted = GenConfig(**{**base.__dict__, "shift": {"gsr_hc": 3.0}})
    tr0, te0, _ = generate(base, SMALL_MANIFEST)
    tr1, te1, _ = generate(shifted, SMALL_MANIFEST)
    assert tr0 == tr1
    for a, b in zip(te0, te1):
        assert np.allclose(b.values["gsr_hc"] - a.values["gsr_hc"], 3.0)
        assert np.array_equal(a.values["ecg_hc"], b.values["ecg_hc"])


def test_informative_mask_is_prefix_per_group():
    mask = informative_mask(GenConfig(informative_frac=0.5), SMALL_MANIFEST, ["ecg_hc", "ecg_t"])
    assert mask.tolist() == [True] * 4 + [False] * 4 + [True, True, False]


def test_signal_lives_in_informative_coordinates():
    cfg = GenConfig(n_train_hours=300, n_test_hours=0, separation=2.0, stress_minute_frac=1.0,
                    missing_rates=NO_MISSING, empty_hour_rate=(0, 0), seed=8)
    train, _, _ = generate(cfg, SMALL_MANIFEST)
    rows = hourly_dataset(train, ["ecg_hc"])
    diff = rows.features[rows.labels == 1].mean(axis=0) - rows.features[rows.labels == 0].mean(axis=0)
    assert np.all(np.abs(diff[:4] - 2.0) < 0.1)
    assert np.all(np.abs(diff[4:]) < 0.1)


def test_strong_signal_is_linearly_separable():
    cfg = GenConfig(n_train_hours=300, n_test_hours=200, separation=3.0, stress_minute_frac=1.0,
                    missing_rates=NO_MISSING, empty_hour_rate=(0, 0), seed=9)
    train, test, _ = generate(cfg, SMALL_MANIFEST)
    tr, te = hourly_dataset(train), hourly_dataset(test)
    model = fit(ClassifierSpec("logreg"), tr.features, tr.labels)
    assert np.mean(model.predict(te.features) == te.labels) >= 0.95


def test_prevalence_extremes():
    train, _, _ = generate(GenConfig(n_train_hours=50, n_test_hours=0, prevalence=1.0), SMALL_MANIFEST)
    assert train.labels.sum() == 50
    train, _, _ = generate(GenConfig(n_train_hours=50, n_test_hours=0, prevalence=0.0), SMALL_MANIFEST)
    assert train.labels.sum() == 0


def test_unknown_group_in_rates_is_rejected():
    with pytest.raises(ConfigError):
        generate(GenConfig(missing_rates={"eeg": (0.1, 0.0)}), SMALL_MANIFEST)
