from __future__ import annotations

import numpy as np

from ..seeding import rng_for
from .base import Estimator, sigmoid
from .tree import Tree, grow_tree


class GradientBoosting(Estimator):
    """Logistic-loss boosting with second-order leaves.

    Each round fits a depth-limited tree to the per-row gradient g = p - y and
    hessian h = p(1 - p); split gain and leaf weights -G/(H + lambda) come from
    the regularised second-order expansion of the loss.
    """

    kind = "gbdt"

    def fit(self, X, y, seed=0, n_jobs=1):
        p = self.params
        y = y.astype(np.float64)
        self.base_rate_ = float(y.mean())
        self.base_score_ = float(np.log(self.base_rate_ / (1.0 - self.base_rate_)))
        margin = np.full(X.shape[0], self.base_score_)
        self.trees_ = []
        for m in range(p["n_rounds"]):
            prob = sigmoid(margin)
            grad, hess = prob - y, prob * (1.0 - prob)
            tree = grow_tree(
                X, grad, hess,
                criterion="xgb", splitter="best", max_depth=p["max_depth"],
                min_samples_split=2, max_features=p["max_features"], rng=rng_for(seed, m),
                reg_lambda=p["reg_lambda"], min_child_weight=p["min_child_weight"],
                gamma=p["gamma"],
            )
            tree.value *= p["learning_rate"]
            self.trees_.append(tree)
            margin += tree.predict(X)
        return self

    def decision_function(self, X):
        margin = np.full(X.shape[0], self.base_score_)
        for t in self.trees_:
            margin += t.predict(X)
        return margin

    def predict_proba(self, X):
        if not self.trees_:
            return np.full(X.shape[0], self.base_rate_)
        return sigmoid(self.decision_function(X))

    def get_state(self):
        return {
            "base_rate": self.base_rate_,
            "base_score": self.base_score_,
            "trees": [t.to_state() for t in self.trees_],
        }

    def set_state(self, s):
        self.base_rate_ = float(s["base_rate"])
        self.base_score_ = float(s["base_score"])
        self.trees_ = [Tree.from_state(t) for t in s["trees"]]
