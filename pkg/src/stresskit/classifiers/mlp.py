from __future__ import annotations

import numpy as np

from ..seeding import rng_for
from .base import Estimator, Standardizer, sigmoid, softplus


def init_params(n_in: int, n_hidden: int, rng: np.random.Generator) -> dict:
    lim1 = np.sqrt(6.0 / (n_in + n_hidden))
    lim2 = np.sqrt(6.0 / (n_hidden + 1))
    return {
        "W1": rng.uniform(-lim1, lim1, size=(n_in, n_hidden)),
        "b1": np.zeros(n_hidden),
        "W2": rng.uniform(-lim2, lim2, size=n_hidden),
        "b2": np.zeros(1),
    }


def forward(params: dict, X: np.ndarray):
    pre = X @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    logit = hidden @ params["W2"] + params["b2"][0]
    return pre, hidden, logit


def loss_and_grads(params: dict, X: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy and its backpropagated gradient per parameter."""
    pre, hidden, logit = forward(params, X)
    n = X.shape[0]
    loss = float(np.mean(softplus(logit) - y * logit))
    d_logit = (sigmoid(logit) - y) / n
    d_hidden = np.outer(d_logit, params["W2"]) * (pre > 0)
    grads = {
        "W2": hidden.T @ d_logit,
        "b2": np.array([d_logit.sum()]),
        "W1": X.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
    }
    return loss, grads


class MLP(Estimator):
    """One ReLU hidden layer, sigmoid output, momentum SGD on mini-batches."""

    kind = "mlp"

    def fit(self, X, y, seed=0, n_jobs=1):
        p = self.params
        self.scaler_ = Standardizer().fit(X) if p["standardize"] else None
        Z = self.scaler_.transform(X) if self.scaler_ else X
        y = y.astype(np.float64)
        params = init_params(Z.shape[1], p["hidden"], rng_for(seed, 0))
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
        n, bs = Z.shape[0], p["batch_size"]
        for epoch in range(p["epochs"]):
            order = rng_for(seed, 1, epoch).permutation(n)
            for start in range(0, n, bs):
                batch = order[start : start + bs]
                _, grads = loss_and_grads(params, Z[batch], y[batch])
                for k in params:
                    velocity[k] = p["momentum"] * velocity[k] - p["learning_rate"] * grads[k]
                    params[k] = params[k] + velocity[k]
        self.params_ = params
        return self

    def predict_proba(self, X):
        Z = self.scaler_.transform(X) if self.scaler_ else X
        return sigmoid(forward(self.params_, Z)[2])

    def get_state(self):
        return {
            "params": {k: v.tolist() for k, v in self.params_.items()},
            "scaler": self.scaler_.to_state() if self.scaler_ else None,
        }

    def set_state(self, s):
        self.params_ = {k: np.asarray(v, dtype=np.float64) for k, v in s["params"].items()}
        self.scaler_ = Standardizer.from_state(s["scaler"]) if s["scaler"] else None
