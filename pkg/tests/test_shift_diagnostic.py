import numpy as np
import pytest

from stresskit.classifiers import ClassifierSpec
from stresskit.data_model import DatasetSplit, FeatureManifest
from stresskit.errors import DataError, ManifestMismatchError, SingleClassError
from stresskit.imputation import ImputationPolicy
from stresskit.shift_diagnostic import (
    _flip_points,
    build_origin_dataset,
    run_shift_diagnostic,
    verdict,
)
from stresskit.evaluation import roc_curve
from stresskit.synth_gen import GenConfig, generate

from conftest import SMALL_MANIFEST, make_hour

FAST = (ClassifierSpec("logreg"), ClassifierSpec("dtree"))


def _splits(rng, n_train, n_test, manifest=SMALL_MANIFEST):
    tr = [make_hour(f"tr{i:05d}", i % 2, manifest, rng) for i in range(n_train)]
    te = [make_hour(f"te{i:05d}", i % 2, manifest, rng) for i in range(n_test)]
    return DatasetSplit("train", tr, manifest), DatasetSplit("test", te, manifest)


def test_origin_dataset_stacks_and_labels(rng):
    train, test = _splits(rng, 10, 5)
    origin = build_origin_dataset(train, test)
    assert len(origin) == 15
    assert origin.labels.sum() == 10
    assert set(origin.split_names[origin.labels == 1]) == {"train"}
    assert origin.features.shape[1] == sum(g.dim for g in SMALL_MANIFEST.groups)
    assert origin.excluded == {"first": 0, "second": 0}


def test_origin_dataset_excludes_incomplete_rows(rng):
    train, test = _splits(rng, 4, 4)
    hours = list(test.instances)
    hours[0] = make_hour("te00000", 0, SMALL_MANIFEST, rng, {"gsr_hc": range(60)})
    test = DatasetSplit("test", hours, SMALL_MANIFEST)
    origin = build_origin_dataset(train, test)
    assert origin.excluded == {"first": 0, "second": 1} and len(origin) == 7
    only_ecg = build_origin_dataset(train, test, groups=["ecg_hc"])
    assert len(only_ecg) == 8
    imputed = build_origin_dataset(train, test, policy=ImputationPolicy(method="mean"))
    assert len(imputed) == 8 and np.isfinite(imputed.features).all()


def test_minute_granularity_rows(rng):
    train, test = _splits(rng, 2, 1)
    origin = build_origin_dataset(train, test, groups=["ecg_hc"], granularity="minute")
    assert len(origin) == 180


def test_manifest_mismatch_and_empty_splits(rng):
    other = FeatureManifest((("ecg_hc", 8),))
    train, _ = _splits(rng, 3, 3)
    _, test_other = _splits(rng, 3, 3, manifest=other)
    with pytest.raises(ManifestMismatchError):
        build_origin_dataset(train, test_other)
    with pytest.raises(DataError):
        build_origin_dataset(train, DatasetSplit("test", [], SMALL_MANIFEST))


def test_single_origin_rows_rejected(rng):
    train, test = _splits(rng, 6, 1)
    hours = [make_hour("te00000", 0, SMALL_MANIFEST, rng, {"ecg_hc": range(60)})]
    test = DatasetSplit("test", hours, SMALL_MANIFEST)
    origin = build_origin_dataset(train, test)
    with pytest.raises(SingleClassError):
        run_shift_diagnostic(origin, FAST)


def test_empty_spec_list_gives_empty_report(rng):
    train, test = _splits(rng, 4, 4)
    report = run_shift_diagnostic(build_origin_dataset(train, test), [])
    assert report.entries == [] and report.top_auc is None and report.verdict is None


def test_verdict_bands():
    assert verdict(0.55) == "none"
    assert verdict(0.6) == "moderate"
    assert verdict(0.8) == "moderate"
    assert verdict(0.81) == "severe"
    assert verdict(None) is None


def test_large_shift_is_detected():
    train, test, _ = generate(
        GenConfig(n_train_hours=60, n_test_hours=60, shift={"ecg_hc": 2.0}, seed=4), SMALL_MANIFEST
    )
    report = run_shift_diagnostic(build_origin_dataset(train, test, groups=["ecg_hc"]), FAST)
    assert report.top_accuracy >= 0.95 and report.verdict == "severe"
    rows = report.summary_rows()
    assert [r["classifier"] for r in rows] == ["logreg", "dtree"]
    assert report.to_dict()["top_auc"] == report.top_auc


def test_swapping_splits_swaps_sensitivity_and_specificity():
    train, test, _ = generate(
        GenConfig(n_train_hours=60, n_test_hours=60, shift={"ecg_hc": 0.5}, seed=3), SMALL_MANIFEST
    )
    a = run_shift_diagnostic(build_origin_dataset(train, test, ["ecg_hc"], seed=1), FAST, seed=2)
    b = run_shift_diagnostic(build_origin_dataset(test, train, ["ecg_hc"], seed=1), FAST, seed=2)
    for (_, ra), (_, rb) in zip(a.entries, b.entries):
        assert ra.accuracy == rb.accuracy
        assert ra.auc == rb.auc
        assert ra.recall_sensitivity == rb.specificity
        assert ra.specificity == rb.recall_sensitivity
    assert a.positive_split == "train" and b.positive_split == "test"


def test_flipped_roc_matches_direct_computation():
    rng = np.random.default_rng(8)
    scores = rng.integers(0, 10, 80) / 10
    labels = rng.integers(0, 2, 80)
    points, auc = roc_curve(scores, labels)
    flipped = _flip_points(points)
    direct, direct_auc = roc_curve(1 - scores, 1 - labels)
    assert len(flipped) == len(direct)
    for p, q in zip(flipped, direct):
        assert p.fpr == pytest.approx(q.fpr, abs=1e-12)
        assert p.tpr == pytest.approx(q.tpr, abs=1e-12)
    assert auc == pytest.approx(direct_auc, abs=1e-12)
