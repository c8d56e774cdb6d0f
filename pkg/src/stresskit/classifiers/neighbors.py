from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .base import Estimator, Standardizer


class KNN(Estimator):
    """k-nearest neighbours on z-scored features; a split vote goes to class 0."""

    kind = "knn"

    def fit(self, X, y, seed=0, n_jobs=1):
        self.scaler_ = Standardizer().fit(X) if self.params["standardize"] else None
        self.X_ = self.scaler_.transform(X) if self.scaler_ else np.array(X, dtype=np.float64)
        self.y_ = y.astype(np.int64)
        self.n_jobs_ = n_jobs
        self._tree = cKDTree(self.X_)
        return self

    def _votes(self, X):
        Z = self.scaler_.transform(X) if self.scaler_ else X
        k = min(self.params["k"], self.X_.shape[0])
        if not hasattr(self, "_tree"):
            self._tree = cKDTree(self.X_)
        _, idx = self._tree.query(Z, k=k, workers=getattr(self, "n_jobs_", 1))
        idx = idx.reshape(Z.shape[0], k)
        return self.y_[idx].sum(axis=1), k

    def predict_proba(self, X):
        ones, k = self._votes(X)
        return ones / k

    def predict(self, X):
        ones, k = self._votes(X)
        return (2 * ones > k).astype(np.int64)

    def get_state(self):
        return {
            "X": self.X_.tolist(),
            "y": self.y_.tolist(),
            "scaler": self.scaler_.to_state() if self.scaler_ else None,
        }

    def set_state(self, s):
        self.X_ = np.asarray(s["X"], dtype=np.float64).reshape(len(s["y"]), -1)
        self.y_ = np.asarray(s["y"], dtype=np.int64)
        self.scaler_ = Standardizer.from_state(s["scaler"]) if s["scaler"] else None
        self._tree = cKDTree(self.X_)
