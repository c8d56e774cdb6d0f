"""Least squares, logistic regression and linear discriminant analysis."""

from __future__ import annotations

import numpy as np

from .base import Estimator, Standardizer, sigmoid, softplus


class LinearRegression(Estimator):
    """Ridge-stabilised normal equations on {0,1} targets; score clipped to [0, 1]."""

    kind = "linreg"

    def fit(self, X, y, seed=0, n_jobs=1):
        n, d = X.shape
        A = np.hstack([X, np.ones((n, 1))])
        gram = A.T @ A
        reg = np.full(d + 1, self.params["ridge"])
        reg[-1] = 0.0
        gram[np.diag_indices_from(gram)] += reg
        try:
            coef = np.linalg.solve(gram, A.T @ y)
        except np.linalg.LinAlgError:
            coef = np.linalg.lstsq(gram, A.T @ y, rcond=None)[0]
        self.coef_, self.intercept_ = coef[:-1], float(coef[-1])
        return self

    def decision_function(self, X):
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return np.clip(self.decision_function(X), 0.0, 1.0)

    def get_state(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_}

    def set_state(self, s):
        self.coef_ = np.asarray(s["coef"], dtype=np.float64)
        self.intercept_ = float(s["intercept"])


def logistic_loss_and_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean cross-entropy plus (l2 / 2) * ||w||^2; the bias is not penalised."""
    z = X @ w + b
    loss = float(np.mean(softplus(z) - y * z) + 0.5 * l2 * (w @ w))
    r = (sigmoid(z) - y) / X.shape[0]
    return loss, X.T @ r + l2 * w, float(r.sum())


class LogisticRegression(Estimator):
    """Batch gradient descent; the step halves whenever it would raise the loss."""

    kind = "logreg"

    def fit(self, X, y, seed=0, n_jobs=1):
        p = self.params
        self.scaler_ = Standardizer().fit(X) if p["standardize"] else None
        Z = self.scaler_.transform(X) if self.scaler_ else X
        y = y.astype(np.float64)
        w, b = np.zeros(Z.shape[1]), 0.0
        lr = p["learning_rate"]
        loss, gw, gb = logistic_loss_and_grad(w, b, Z, y, p["l2"])
        self.n_iter_ = 0
        for it in range(p["max_iter"]):
            self.n_iter_ = it + 1
            while True:
                w_new, b_new = w - lr * gw, b - lr * gb
                new_loss, ngw, ngb = logistic_loss_and_grad(w_new, b_new, Z, y, p["l2"])
                if new_loss <= loss or lr < 1e-12:
                    break
                lr *= 0.5
            delta = loss - new_loss
            w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
            if abs(delta) < p["tol"]:
                break
        self.coef_, self.intercept_, self.loss_ = w, b, loss
        return self

    def decision_function(self, X):
        Z = self.scaler_.transform(X) if self.scaler_ else X
        return Z @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def get_state(self):
        return {
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_,
            "scaler": self.scaler_.to_state() if self.scaler_ else None,
        }

    def set_state(self, s):
        self.coef_ = np.asarray(s["coef"], dtype=np.float64)
        self.intercept_ = float(s["intercept"])
        self.scaler_ = Standardizer.from_state(s["scaler"]) if s["scaler"] else None


class LDA(Estimator):
    """Two-class Gaussian discriminant with a pooled, ridge-regularised covariance.

    The ridge is ``ridge_scale * trace(S) / d`` on the diagonal, which keeps the
    solve well-posed for collinear or constant features.
    """

    kind = "lda"

    def fit(self, X, y, seed=0, n_jobs=1):
        X0, X1 = X[y == 0], X[y == 1]
        n, d = X.shape
        mu0, mu1 = X0.mean(axis=0), X1.mean(axis=0)
        centred = np.vstack([X0 - mu0, X1 - mu1])
        dof = max(n - 2, 1)
        S = centred.T @ centred / dof
        tr = float(np.trace(S))
        eps = self.params["ridge_scale"] * (tr / d if tr > 0 else 1.0)
        S[np.diag_indices_from(S)] += eps
        w = np.linalg.solve(S, mu1 - mu0)
        prior1 = X1.shape[0] / n
        self.coef_ = w
        self.intercept_ = float(-0.5 * (mu0 + mu1) @ w + np.log(prior1 / (1.0 - prior1)))
        self.means_ = np.vstack([mu0, mu1])
        self.priors_ = np.array([1.0 - prior1, prior1])
        self.ridge_ = eps
        return self

    def decision_function(self, X):
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def get_state(self):
        return {
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_,
            "means": self.means_.tolist(),
            "priors": self.priors_.tolist(),
            "ridge": self.ridge_,
        }

    def set_state(self, s):
        self.coef_ = np.asarray(s["coef"], dtype=np.float64)
        self.intercept_ = float(s["intercept"])
        self.means_ = np.asarray(s["means"], dtype=np.float64)
        self.priors_ = np.asarray(s["priors"], dtype=np.float64)
        self.ridge_ = float(s["ridge"])
