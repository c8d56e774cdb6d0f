"""Array-backed binary trees shared by CART, the forests, AdaBoost stumps and GBDT.

Rows go left when ``x[feature] <= threshold``. Each node tracks two additive
statistics per row: (weight, weight * label) for Gini trees and
(gradient, hessian) for second-order boosting trees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            n, d = stack.pop()
            best = max(best, d)
            if self.feature[n] != LEAF:
                stack += [(self.left[n], d + 1), (self.right[n], d + 1)]
        return best

    def to_state(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_state(cls, s: dict) -> "Tree":
        return cls(
            np.asarray(s["feature"], dtype=np.int64),
            np.asarray(s["threshold"], dtype=np.float64),
            np.asarray(s["left"], dtype=np.int64),
            np.asarray(s["right"], dtype=np.int64),
            np.asarray(s["value"], dtype=np.float64),
        )


def resolve_max_features(max_features, d: int) -> int:
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(d)))
    if max_features == "log2":
        return max(1, math.ceil(math.log2(d))) if d > 1 else 1
    if isinstance(max_features, float):
        return max(1, min(d, math.ceil(max_features * d)))
    return max(1, min(d, int(max_features)))


class _Criterion:
    """Gini ('gini') or second-order gain ('xgb'), written as a score to minimise."""

    def __init__(self, kind: str, reg_lambda: float = 1.0, min_child_weight: float = 0.0, gamma: float = 0.0):
        self.kind = kind
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.gamma = gamma

    def children(self, aL, bL, aR, bR):
        """Score of a split; +inf where the split is not admissible."""
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "gini":
                score = 2.0 * (bL * (aL - bL) / aL + bR * (aR - bR) / aR)
                return np.where((aL > 0) & (aR > 0), score, np.inf)
            lam = self.reg_lambda
            score = -(aL * aL / (bL + lam) + aR * aR / (bR + lam))
            ok = (bL >= self.min_child_weight) & (bR >= self.min_child_weight)
            return np.where(ok, score, np.inf)

    def accepts(self, best: float, a: float, b: float) -> bool:
        if not np.isfinite(best):
            return False
        if self.kind == "gini":
            return True
        parent = -(a * a / (b + self.reg_lambda))
        return 0.5 * (parent - best) - self.gamma > 0

    def leaf_value(self, a: float, b: float) -> float:
        if self.kind == "gini":
            return b / a
        return -a / (b + self.reg_lambda)

    def is_pure(self, a: float, b: float) -> bool:
        return self.kind == "gini" and (b <= 0 or b >= a)


def _best_split(Xn, a, b, crit):
    """Exhaustive search over midpoints of consecutive distinct values."""
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    A = np.cumsum(a[order], axis=0)[:-1]
    B = np.cumsum(b[order], axis=0)[:-1]
    a_tot, b_tot = a.sum(), b.sum()
    score = crit.children(A, B, a_tot - A, b_tot - B)
    score = np.where(xs[:-1] < xs[1:], score, np.inf)
    flat = int(np.argmin(score.T))  # lowest feature first, then lowest threshold
    j, pos = divmod(flat, score.shape[0])
    best = score[pos, j]
    lo, hi = xs[pos, j], xs[pos + 1, j]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return best, j, thr


def _random_split(Xn, a, b, crit, lo, hi, rng):
    """One uniform threshold in [min, max) per candidate feature."""
    thr = rng.uniform(lo, hi)
    thr = np.where(thr >= hi, lo, thr)
    go_left = Xn <= thr
    aL, bL = a @ go_left, b @ go_left
    score = crit.children(aL, bL, a.sum() - aL, b.sum() - bL)
    j = int(np.argmin(score))
    return score[j], j, thr[j]


def grow_tree(
    X: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    *,
    criterion: str = "gini",
    splitter: str = "best",
    max_depth: int | None = None,
    min_samples_split: int = 2,
    max_features=None,
    rng: np.random.Generator | None = None,
    reg_lambda: float = 1.0,
    min_child_weight: float = 0.0,
    gamma: float = 0.0,
    rows: np.ndarray | None = None,
) -> Tree:
    crit = _Criterion(criterion, reg_lambda, min_child_weight, gamma)
    d = X.shape[1]
    k = resolve_max_features(max_features, d)
    depth_cap = math.inf if max_depth is None else max_depth
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        for lst in (feature, left, right):
            lst.append(LEAF)
        threshold.append(0.0)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        a_n, b_n = a[idx], b[idx]
        a_sum, b_sum = float(a_n.sum()), float(b_n.sum())
        value[node] = crit.leaf_value(a_sum, b_sum)
        if idx.size < min_samples_split or depth >= depth_cap or crit.is_pure(a_sum, b_sum):
            continue
        Xnode = X[idx]
        lo_all, hi_all = Xnode.min(axis=0), Xnode.max(axis=0)
        varying = np.flatnonzero(hi_all > lo_all)
        if varying.size == 0:
            continue
        if k < varying.size:
            cand = np.sort(rng.choice(varying, size=k, replace=False))
        else:
            cand = varying
        Xn = Xnode[:, cand]
        if splitter == "best":
            best, j, thr = _best_split(Xn, a_n, b_n, crit)
        else:
            best, j, thr = _random_split(Xn, a_n, b_n, crit, lo_all[cand], hi_all[cand], rng)
        if not crit.accepts(best, a_sum, b_sum):
            continue
        go_left = Xn[:, j] <= thr
        if go_left.all() or not go_left.any():
            continue
        feature[node] = int(cand[j])
        threshold[node] = float(thr)
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        # right pushed first so the left subtree is numbered first
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )
