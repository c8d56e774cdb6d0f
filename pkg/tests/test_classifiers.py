from __future__ import annotations

import numpy as np
import pytest

from stresskit.classifiers import (
    DEFAULT_HYPERPARAMETERS,
    KINDS,
    ClassifierSpec,
    fit,
    load_model,
    save_model,
)
from stresskit.classifiers.linear import logistic_loss_and_grad
from stresskit.classifiers.mlp import init_params, loss_and_grads
from stresskit.errors import ConfigError, DataError, LayoutMismatchError, SingleClassError

FAST = {
    "random_forest": {"n_trees": 15},
    "extra_trees": {"n_trees": 15},
    "gbdt": {"n_rounds": 30},
    "mlp": {"epochs": 40},
}


def spec(kind, **hp):
    return ClassifierSpec(kind, {**FAST.get(kind, {}), **hp}, seed=3)


def blobs(rng, n=200, sep=4.0, d=2):
    y = np.arange(n) % 2
    X = rng.normal(size=(n, d))
    X[:, 0] += sep * y
    return X, y


def xor(rng):
    base = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    X = np.repeat(base, 50, axis=0) + rng.normal(scale=0.1, size=(200, 2))
    y = np.repeat([0, 1, 1, 0], 50)
    return X, y


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_learns_separable_blobs(kind, rng):
    X, y = blobs(rng, 400)
    m = fit(spec(kind), X[:200], y[:200])
    p = m.predict_proba(X[200:])
    assert np.all((p >= 0) & (p <= 1)) and np.isfinite(p).all()
    assert np.mean(m.predict(X[200:]) == y[200:]) >= 0.90


def test_logreg_on_separable_blobs(rng):
    X, y = blobs(rng, 400)
    m = fit(spec("logreg"), X[:200], y[:200])
    assert np.mean(m.predict(X[200:]) == y[200:]) >= 0.95


def test_xor_separates_linear_from_tree_models(rng):
    X, y = xor(rng)
    Xt, yt = xor(np.random.default_rng(99))
    lin = fit(spec("logreg"), X, y)
    assert abs(np.mean(lin.predict(Xt) == yt) - 0.5) <= 0.15
    et = fit(spec("extra_trees"), X, y)
    assert np.mean(et.predict(Xt) == yt) >= 0.95


@pytest.mark.parametrize("kind", KINDS)
def test_determinism_and_worker_independence(kind, rng):
    X, y = blobs(rng, 120, sep=1.0, d=4)
    a = fit(spec(kind), X, y, n_jobs=1).predict_proba(X)
    b = fit(spec(kind), X, y, n_jobs=4).predict_proba(X)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("kind", KINDS)
def test_save_load_round_trip(kind, rng, tmp_path):
    X, y = blobs(rng, 100, sep=1.0, d=3)
    m = fit(spec(kind), X, y)
    path = tmp_path / "m.json"
    save_model(m, path)
    again = load_model(path)
    assert again.predict_proba(X).tobytes() == m.predict_proba(X).tobytes()
    assert again.fingerprint == m.fingerprint


@pytest.mark.parametrize("kind", [k for k in KINDS if k != "linreg"])
def test_single_class_is_rejected(kind, rng):
    with pytest.raises(SingleClassError):
        fit(spec(kind), rng.normal(size=(10, 2)), np.zeros(10, int))


def test_linreg_tolerates_single_class(rng):
    m = fit(spec("linreg"), rng.normal(size=(10, 2)), np.ones(10, int))
    assert np.allclose(m.predict_proba(rng.normal(size=(5, 2))), 1.0)


@pytest.mark.parametrize(
    "X, y",
    [
        (np.array([[np.nan, 1.0], [1.0, 2.0]]), np.array([0, 1])),
        (np.array([[np.inf, 1.0], [1.0, 2.0]]), np.array([0, 1])),
        (np.array([[1.0, 2.0]]), np.array([1])),
        (np.ones((3, 2)), np.array([0, 1, 2])),
    ],
)
def test_invalid_training_input(X, y):
    with pytest.raises(DataError):
        fit(spec("logreg"), X, y)


def test_predict_checks_layout_and_missing(rng):
    X, y = blobs(rng, 50)
    m = fit(spec("logreg"), X, y)
    with pytest.raises(LayoutMismatchError):
        m.predict_proba(np.ones((2, 3)))
    with pytest.raises(DataError):
        m.predict_proba(np.array([[np.nan, 0.0]]))


@pytest.mark.parametrize(
    "kind, hp",
    [("knn", {"k": 0}), ("random_forest", {"n_trees": 0}), ("logreg", {"learning_rate": 0}),
     ("mlp", {"momentum": 1.0}), ("dtree", {"depth": 3}), ("nope", {})],
)
def test_hyperparameter_validation(kind, hp):
    with pytest.raises(ConfigError):
        ClassifierSpec(kind, hp)


def test_spec_dict_round_trip():
    s = ClassifierSpec("gbdt", {"n_rounds": 5}, seed=11)
    assert ClassifierSpec.from_dict(s.to_dict()) == s
    assert ClassifierSpec.from_dict("knn") == ClassifierSpec("knn")
    assert set(DEFAULT_HYPERPARAMETERS) == set(KINDS)


def test_zero_variance_features_are_accepted(rng):
    X, y = blobs(rng, 80)
    X = np.hstack([X, np.ones((80, 1))])
    for kind in KINDS:
        p = fit(spec(kind), X, y).predict_proba(X)
        assert np.isfinite(p).all()


# -- gradient checks -------------------------------------------------------------------


@pytest.mark.parametrize("trial", range(10))
def test_logistic_gradient_matches_finite_differences(trial):
    rng = np.random.default_rng(trial)
    n, d = rng.integers(3, 15), rng.integers(1, 6)
    X, y = rng.normal(size=(n, d)), rng.integers(0, 2, n).astype(float)
    w, b, l2 = rng.normal(size=d), float(rng.normal()), 1e-2
    _, gw, gb = logistic_loss_and_grad(w, b, X, y, l2)
    h = 1e-6
    fd = np.array([
        (logistic_loss_and_grad(w + h * e, b, X, y, l2)[0] - logistic_loss_and_grad(w - h * e, b, X, y, l2)[0]) / (2 * h)
        for e in np.eye(d)
    ])
    fdb = (logistic_loss_and_grad(w, b + h, X, y, l2)[0] - logistic_loss_and_grad(w, b - h, X, y, l2)[0]) / (2 * h)
    assert relative_error(np.r_[gw, gb], np.r_[fd, fdb]) <= 1e-5


@pytest.mark.parametrize("trial", range(10))
def test_mlp_gradients_match_finite_differences_per_layer(trial):
    rng = np.random.default_rng(100 + trial)
    X, y = rng.normal(size=(5, 3)), rng.integers(0, 2, 5).astype(float)
    params = init_params(3, 4, rng)
    params["b1"] = rng.normal(scale=0.1, size=4)
    _, grads = loss_and_grads(params, X, y)
    h = 1e-6
    for key, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[key][idx] += h
            minus[key][idx] -= h
            fd[idx] = (loss_and_grads(plus, X, y)[0] - loss_and_grads(minus, X, y)[0]) / (2 * h)
        assert relative_error(grads[key], fd) <= 1e-4, key


def test_logreg_loss_decreases_to_convergence(rng):
    X, y = blobs(rng, 100, sep=1.0)
    m = fit(spec("logreg"), X, y)
    assert m.estimator.n_iter_ <= DEFAULT_HYPERPARAMETERS["logreg"]["max_iter"]
    z = m.estimator.scaler_.transform(X)
    loss0 = logistic_loss_and_grad(np.zeros(2), 0.0, z, y.astype(float), 1e-4)[0]
    assert m.estimator.loss_ < loss0


# -- per-kind contracts -------------------------------------------------------------------


def test_knn_k1_reproduces_training_labels(rng):
    X, y = blobs(rng, 60, sep=0.5)
    m = fit(spec("knn", k=1), X, y)
    assert np.array_equal(m.predict_proba(X), y.astype(float))


def test_knn_tie_goes_to_class_zero():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = np.array([0, 1, 0, 1])
    m = fit(spec("knn", k=2, standardize=False), X, y)
    assert m.predict_proba(np.array([[0.5]]))[0] == 0.5
    assert m.predict(np.array([[0.5]]))[0] == 0


def test_lda_midpoint_probability_is_half():
    rng = np.random.default_rng(0)
    n = 2000
    X0 = rng.normal(size=(n, 3))
    X = np.vstack([X0, -X0]) + np.r_[np.zeros((n, 3)), np.zeros((n, 3))]
    X[:n] -= [1, 0, 0]
    X[n:] += [1, 0, 0]
    y = np.r_[np.zeros(n, int), np.ones(n, int)]
    m = fit(spec("lda"), X, y)
    mid = m.estimator.means_.mean(axis=0)
    assert abs(m.predict_proba(mid[None, :])[0] - 0.5) <= 1e-6


def test_lda_direction_converges_to_mean_difference():
    rng = np.random.default_rng(1)
    n, d = 10000, 4
    y = np.arange(n) % 2
    X = rng.normal(size=(n, d))
    X[y == 1] += [1.0, 0.5, 0.0, 0.0]
    w = fit(spec("lda"), X, y).estimator.coef_
    ref = np.array([1.0, 0.5, 0.0, 0.0])
    angle = np.degrees(np.arccos(w @ ref / np.linalg.norm(w) / np.linalg.norm(ref)))
    assert angle <= 2.0


def test_lda_handles_collinear_features(rng):
    X, y = blobs(rng, 100)
    X = np.hstack([X, X[:, :1]])
    assert np.isfinite(fit(spec("lda"), X, y).predict_proba(X)).all()


def test_gbdt_without_rounds_predicts_base_rate(rng):
    X, y = blobs(rng, 50)
    y[:5] = 1
    m = fit(spec("gbdt", n_rounds=0), X, y)
    assert np.allclose(m.predict_proba(X), y.mean(), rtol=0, atol=1e-12)


def test_adaboost_training_error_is_non_increasing(rng):
    X, y = blobs(rng, 200, sep=2.5)
    m = fit(spec("adaboost", n_rounds=40), X, y)
    errors = [np.mean(p != y) for p in m.estimator.staged_predict(X)]
    assert len(errors) >= 1
    assert all(b <= a for a, b in zip(errors, errors[1:]))


def test_adaboost_stops_on_perfect_stump():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    m = fit(spec("adaboost"), X, y)
    assert len(m.estimator.stumps_) == 1
    assert np.array_equal(m.predict(X), y)


def test_single_tree_forest_equals_decision_tree(rng):
    X, y = blobs(rng, 150, sep=1.0, d=5)
    hp = {"n_trees": 1, "bootstrap": False, "max_features": None, "max_depth": 12}
    forest = fit(ClassifierSpec("random_forest", hp, seed=5), X, y)
    tree = fit(ClassifierSpec("dtree", {"max_depth": 12}, seed=5), X, y)
    Xq = rng.normal(size=(300, 5))
    assert forest.predict_proba(Xq).tobytes() == tree.predict_proba(Xq).tobytes()


@pytest.mark.parametrize("kind", ["random_forest", "extra_trees"])
def test_forests_ignore_training_row_order(kind, rng):
    X, y = blobs(rng, 120, sep=1.0, d=4)
    perm = rng.permutation(120)
    s = ClassifierSpec(kind, {"n_trees": 10, "bootstrap": False}, seed=2)
    Xq = rng.normal(size=(200, 4))
    a = fit(s, X, y).predict_proba(Xq)
    b = fit(s, X[perm], y[perm]).predict_proba(Xq)
    assert np.array_equal(a, b)


def test_tree_depth_limit(rng):
    X, y = blobs(rng, 200, sep=0.3, d=3)
    m = fit(spec("dtree", max_depth=2), X, y)
    assert m.estimator.tree_.depth() <= 2
    p = m.predict_proba(X)
    assert np.unique(p).size <= 4
