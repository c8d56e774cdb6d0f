from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stresskit.data_model import LayoutEntry, MinuteDataset
from stresskit.errors import ConfigError, DataError, LayoutMismatchError, UnfittableCoordinateError
from stresskit.imputation import (
    ImputationPolicy,
    RemovedRow,
    apply_mean_imputer,
    euclidean_impute,
    fit_mean_imputer,
    impute,
    write_removal_manifest,
)

LAYOUT = (LayoutEntry("ecg_hc", 0, 2), LayoutEntry("gsr_hc", 2, 3), LayoutEntry("ecg_c", 5, 1))
EUCLID = ImputationPolicy("euclidean", ("ecg_hc", "gsr_hc"))


def dataset(features, present, layout=LAYOUT):
    n = len(present)
    return MinuteDataset(
        np.asarray(features, float), np.asarray(present, bool), np.zeros(n, int),
        np.array([f"h{i // 60}" for i in range(n)], dtype=object), np.arange(n) % 60, layout,
    )


def random_dataset(rng, n, p_missing, integer_grid=False, n_complete=0):
    width = sum(e.dim for e in LAYOUT)
    feats = rng.integers(-3, 4, size=(n, width)).astype(float) if integer_grid else rng.normal(size=(n, width))
    present = rng.random((n, len(LAYOUT))) >= p_missing
    present[:n_complete] = True
    return dataset(feats, present)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 25))
    seed = draw(st.integers(0, 2**32 - 1))
    p = draw(st.sampled_from([0.0, 0.2, 0.5, 0.9]))
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, n, p, integer_grid=draw(st.booleans()))
    if draw(st.booleans()):
        pres = np.array(data.present)
        pres[rng.integers(n)] = False  # one all-missing row
        data = data.replace(data.features, pres)
    return data


def reference_for(data, rng):
    """A reference that always has complete rows and every coordinate observed."""
    return random_dataset(rng, 12, 0.3, integer_grid=True, n_complete=3)


# -- mean imputation -----------------------------------------------------------


def test_mean_over_present_entries_only():
    layout = (LayoutEntry("a", 0, 1),)
    data = dataset([[1.0], [2.0], [np.nan], [3.0]], [[True], [True], [False], [True]], layout)
    assert fit_mean_imputer(data).means.tolist() == [2.0]


def test_mean_of_complete_data_is_column_mean(rng):
    data = random_dataset(rng, 50, 0.0)
    assert np.allclose(fit_mean_imputer(data).means, data.features.mean(axis=0), rtol=1e-12, atol=0)


def test_fully_missing_coordinate_is_named():
    data = dataset(np.ones((3, 6)), [[True, False, True]] * 3)
    with pytest.raises(UnfittableCoordinateError) as info:
        fit_mean_imputer(data)
    assert "gsr_hc[0]" in str(info.value) and "gsr_hc[2]" in str(info.value)


def test_apply_fills_with_stored_means():
    layout = (LayoutEntry("a", 0, 1), LayoutEntry("b", 1, 1))
    train = dataset([[1.0, 9.9], [3.0, 9.9]], [[True, True], [True, True]], layout)
    test = dataset([[np.nan, 5.0]], [[False, True]], layout)
    out = apply_mean_imputer(fit_mean_imputer(train), test)
    assert out.features.tolist() == [[2.0, 5.0]]


def test_train_means_fill_test_rows(rng):
    train = random_dataset(rng, 40, 0.2)
    test = random_dataset(rng, 40, 0.5)
    imp = fit_mean_imputer(train)
    out = apply_mean_imputer(imp, test)
    holes = ~test.coordinate_present()
    cols = np.nonzero(holes)[1]
    assert np.array_equal(out.features[holes], imp.means[cols])


def test_apply_rejects_foreign_layout(rng):
    imp = fit_mean_imputer(random_dataset(rng, 10, 0.0))
    layout = (LayoutEntry("a", 0, 3), LayoutEntry("b", 3, 3))
    with pytest.raises(LayoutMismatchError):
        apply_mean_imputer(imp, dataset(np.ones((2, 6)), np.ones((2, 2)), layout))


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_mean_imputation_invariants(data):
    ref = reference_for(data, np.random.default_rng(len(data)))
    out, removed = impute(ref, data, ImputationPolicy("mean"))
    assert removed == []
    assert out.is_complete() and np.isfinite(out.features).all()
    keep = data.coordinate_present()
    assert np.array_equal(out.features[keep], data.features[keep])
    again, _ = impute(ref, out, ImputationPolicy("mean"))
    assert again == out


# -- euclidean imputation ----------------------------------------------------------


def brute_force_euclidean(data, ref, policy):
    """Independent oracle: linear scans, lowest index wins ties."""
    names = [e.name for e in LAYOUT]
    cmp = [k for k, n in enumerate(names) if n in policy.comparator_groups]
    feats, pres = np.array(data.features), np.array(data.present)
    means = np.nanmean(np.where(ref.coordinate_present(), ref.features, np.nan), axis=0)
    dropped = []
    for i in range(len(data)):
        if pres[i].all():
            continue
        usable = [k for k in cmp if data.present[i, k]]
        cols = [c for k in usable for c in range(LAYOUT[k].offset, LAYOUT[k].offset + LAYOUT[k].dim)]
        failed = not usable
        for k in range(len(LAYOUT)):
            if data.present[i, k] or not usable:
                continue
            best, best_d = None, np.inf
            for r in range(len(ref)):
                if not (ref.present[r, usable].all() and ref.present[r, k]):
                    continue
                d = np.sqrt(np.sum((ref.features[r, cols] - data.features[i, cols]) ** 2))
                if d < best_d:
                    best, best_d = r, d
            if best is None:
                failed = True
                continue
            e = LAYOUT[k]
            feats[i, e.offset : e.offset + e.dim] = ref.features[best, e.offset : e.offset + e.dim]
            pres[i, k] = True
        if failed and not pres[i].all():
            if policy.fallback == "mean":
                coord = np.repeat(pres[i], [e.dim for e in LAYOUT])
                feats[i] = np.where(coord, feats[i], means)
                pres[i] = True
            else:
                dropped.append(i)
    keep = [i for i in range(len(data)) if i not in dropped]
    return feats[keep], pres[keep], dropped


@settings(max_examples=80, deadline=None)
@given(datasets(), st.sampled_from(["mean", "drop"]))
def test_euclidean_matches_brute_force(data, fallback):
    ref = reference_for(data, np.random.default_rng(len(data) + 1))
    policy = ImputationPolicy("euclidean", ("ecg_hc", "gsr_hc"), fallback)
    out, removed = euclidean_impute(data, ref, policy)
    feats, pres, dropped = brute_force_euclidean(data, ref, policy)
    assert np.array_equal(out.features, feats, equal_nan=True)
    assert np.array_equal(out.present, pres)
    assert [(r.hour_id, r.minute_index) for r in removed] == [
        (str(data.hour_ids[i]), int(data.minute_index[i])) for i in dropped
    ]


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_euclidean_invariants(data):
    ref = reference_for(data, np.random.default_rng(len(data) + 2))
    out, removed = euclidean_impute(data, ref, EUCLID)
    assert removed == [] and out.is_complete()
    keep = data.coordinate_present()
    assert np.array_equal(out.features[keep], data.features[keep])
    assert euclidean_impute(out, ref, EUCLID)[0] == out
    # donor fidelity: rows filled by a donor copy some reference row bit-exactly
    for i in range(len(data)):
        if not data.present[i, [0, 1]].any():
            continue  # mean fallback rows
        for k, e in enumerate(LAYOUT):
            if data.present[i, k]:
                continue
            block = out.features[i, e.slice]
            ref_blocks = ref.features[ref.present[:, k]][:, e.slice]
            means = fit_mean_imputer(ref).means[e.slice]
            assert (ref_blocks == block).all(axis=1).any() or np.array_equal(block, means)


def test_exact_duplicate_donor_is_copied_bit_exactly(rng):
    ref = random_dataset(rng, 30, 0.0)
    donor = 17
    query_feats = np.array(ref.features[donor : donor + 1])
    query_feats[0, 2:5] = np.nan
    query = dataset(query_feats, [[True, False, True]])
    out, _ = euclidean_impute(query, ref, ImputationPolicy("euclidean", ("ecg_hc",)))
    assert out.features[0, 2:5].tobytes() == ref.features[donor, 2:5].tobytes()


def test_ties_go_to_lowest_reference_index():
    feats = np.array([[0, 0, 1, 1, 1, 0], [5, 5, 2, 2, 2, 0], [0, 0, 3, 3, 3, 0], [0, 0, 4, 4, 4, 0]], float)
    ref = dataset(feats, np.ones((4, 3)))
    query = dataset([[0, 0, np.nan, np.nan, np.nan, 0]], [[True, False, True]])
    out, _ = euclidean_impute(query, ref, ImputationPolicy("euclidean", ("ecg_hc",)))
    assert out.features[0, 2:5].tolist() == [1, 1, 1]
    # many exact ties, more than the tree probe width
    feats = np.tile([[0, 0, 0, 0, 0, 0]], (20, 1)).astype(float)
    feats[:, 2] = np.arange(20)
    out, _ = euclidean_impute(query, dataset(feats, np.ones((20, 3))), ImputationPolicy("euclidean", ("ecg_hc",)))
    assert out.features[0, 2] == 0.0


def test_all_missing_row_with_mean_fallback_matches_mean_imputer(rng):
    ref = random_dataset(rng, 20, 0.2, n_complete=2)
    row = dataset(np.full((1, 6), np.nan), [[False, False, False]])
    out, removed = euclidean_impute(row, ref, EUCLID)
    assert removed == []
    assert np.array_equal(out.features, apply_mean_imputer(fit_mean_imputer(ref), row).features)


def test_drop_fallback_reports_rows(tmp_path, rng):
    ref = random_dataset(rng, 20, 0.0)
    data = dataset(np.full((2, 6), np.nan), [[False, False, False], [False, False, False]])
    out, removed = euclidean_impute(data, ref, ImputationPolicy("euclidean", ("ecg_hc",), "drop"))
    assert len(out) == 0
    assert removed == [RemovedRow("h0", 0, "no comparator group present"), RemovedRow("h0", 1, "no comparator group present")]
    path = tmp_path / "removed.csv"
    write_removal_manifest(path, removed, ["seed 1"])
    assert path.read_text().splitlines() == [
        "# seed 1", "hour_id,minute_index,reason",
        "h0,0,no comparator group present", "h0,1,no comparator group present",
    ]


def test_standardized_distance_changes_donor():
    feats = np.array([[0, 10, 1, 1, 1, 0], [1, 0, 2, 2, 2, 0], [0, 0, 3, 3, 3, 0], [3, 30, 3, 3, 3, 0]], float)
    ref = dataset(feats, np.ones((4, 3)))
    query = dataset([[0.0, 9.0, np.nan, np.nan, np.nan, 0]], [[True, False, True]])
    raw, _ = euclidean_impute(query, ref, ImputationPolicy("euclidean", ("ecg_hc",)))
    std, _ = euclidean_impute(query, ref, ImputationPolicy("euclidean", ("ecg_hc",), standardize=True))
    assert raw.features[0, 2] == 1.0
    assert std.features[0, 2] in (1.0, 2.0, 3.0)


def test_policy_validation():
    with pytest.raises(ConfigError):
        ImputationPolicy("median")
    with pytest.raises(ConfigError):
        ImputationPolicy("euclidean")
    with pytest.raises(ConfigError):
        ImputationPolicy("mean", fallback="zero")


def test_reference_without_complete_row_is_rejected():
    ref = dataset(np.ones((2, 6)), [[True, False, True], [False, True, True]])
    with pytest.raises(DataError):
        euclidean_impute(ref, ref, EUCLID)
