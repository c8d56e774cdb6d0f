"""CART, bagged/randomised forests and SAMME AdaBoost over decision stumps."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..seeding import rng_for
from .base import Estimator
from .tree import Tree, grow_tree


def _gini_tree(X, y, w, rows, rng, **kw) -> Tree:
    w = np.asarray(w, dtype=np.float64)
    return grow_tree(X, w, w * y, criterion="gini", rows=rows, rng=rng, **kw)


class DecisionTree(Estimator):
    kind = "dtree"

    def fit(self, X, y, seed=0, n_jobs=1, sample_weight=None):
        p = self.params
        w = np.ones(X.shape[0]) if sample_weight is None else sample_weight
        self.tree_ = _gini_tree(
            X, y.astype(np.float64), w, None, rng_for(seed, 0),
            splitter="best", max_depth=p["max_depth"],
            min_samples_split=p["min_samples_split"], max_features=p["max_features"],
        )
        return self

    def predict_proba(self, X):
        return self.tree_.predict(X)

    def get_state(self):
        return {"tree": self.tree_.to_state()}

    def set_state(self, s):
        self.tree_ = Tree.from_state(s["tree"])


class _Forest(Estimator):
    splitter = "best"

    def _fit_one(self, X, y, seed, i):
        p = self.params
        rng = rng_for(seed, i)
        n = X.shape[0]
        if p["bootstrap"]:
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
            rows = np.flatnonzero(counts)
        else:
            counts, rows = np.ones(n), None
        return _gini_tree(
            X, y, counts, rows, rng,
            splitter=self.splitter, max_depth=p["max_depth"],
            min_samples_split=p["min_samples_split"], max_features=p["max_features"],
        )

    def fit(self, X, y, seed=0, n_jobs=1):
        y = y.astype(np.float64)
        n_trees = self.params["n_trees"]
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                self.trees_ = list(pool.map(lambda i: self._fit_one(X, y, seed, i), range(n_trees)))
        else:
            self.trees_ = [self._fit_one(X, y, seed, i) for i in range(n_trees)]
        return self

    def predict_proba(self, X):
        total = np.zeros(X.shape[0])
        for t in self.trees_:
            total += t.predict(X)
        return total / len(self.trees_)

    def get_state(self):
        return {"trees": [t.to_state() for t in self.trees_]}

    def set_state(self, s):
        self.trees_ = [Tree.from_state(t) for t in s["trees"]]


class RandomForest(_Forest):
    """Bootstrap replicas, best split among a random feature subset per node."""

    kind = "random_forest"
    splitter = "best"


class ExtraTrees(_Forest):
    """Full training set, one random threshold per candidate feature per node."""

    kind = "extra_trees"
    splitter = "random"


class AdaBoost(Estimator):
    """Binary SAMME with depth-1 stumps.

    P(label = 1) is the alpha-weighted share of stumps voting 1, so the 0.5
    cut-off coincides with the sign of the boosted score.
    """

    kind = "adaboost"

    def fit(self, X, y, seed=0, n_jobs=1):
        p = self.params
        n = X.shape[0]
        y = y.astype(np.float64)
        w = np.full(n, 1.0 / n)
        self.stumps_, self.alphas_ = [], []
        self.prior_ = float(y.mean())
        for m in range(p["n_rounds"]):
            stump = _gini_tree(X, y, w, None, rng_for(seed, m), splitter="best", max_depth=1)
            pred = stump.predict(X) >= 0.5
            miss = pred != (y == 1)
            err = float(w[miss].sum() / w.sum())
            if err >= 0.5:
                break
            if err <= 0:
                alpha = p["max_alpha"]
            else:
                alpha = min(p["max_alpha"], p["learning_rate"] * np.log((1.0 - err) / err))
            self.stumps_.append(stump)
            self.alphas_.append(float(alpha))
            if err <= 0:
                break
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        return self

    def staged_predict(self, X):
        """Labels after each boosting round."""
        num = np.zeros(X.shape[0])
        total = 0.0
        for stump, alpha in zip(self.stumps_, self.alphas_):
            num += alpha * (stump.predict(X) >= 0.5)
            total += alpha
            yield (num / total >= 0.5).astype(np.int64)

    def predict_proba(self, X):
        if not self.stumps_:
            return np.full(X.shape[0], self.prior_)
        num = np.zeros(X.shape[0])
        for stump, alpha in zip(self.stumps_, self.alphas_):
            num += alpha * (stump.predict(X) >= 0.5)
        return num / sum(self.alphas_)

    def get_state(self):
        return {
            "stumps": [s.to_state() for s in self.stumps_],
            "alphas": list(self.alphas_),
            "prior": self.prior_,
        }

    def set_state(self, s):
        self.stumps_ = [Tree.from_state(t) for t in s["stumps"]]
        self.alphas_ = [float(a) for a in s["alphas"]]
        self.prior_ = float(s["prior"])
