"""Regression trees and squared-error gradient boosting, written from scratch.

Trees are grown level by level with exact greedy search over every midpoint
between consecutive distinct feature values.  Presorting happens once per
``fit``; the scan itself lives in :mod:`edgetwin._kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _kernels
from .errors import DimensionMismatch, EmptyDataset

# Splits must improve the squared error by more than this fraction of the
# node's sum of squares; keeps rounding noise from creating splits.
_REL_GAIN_FLOOR = 1e-12


@dataclass(frozen=True)
class RegressionTree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf holding ``value[i]``.

    A sample goes left at node ``i`` when ``x[feature[i]] <= threshold[i]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                best = max(best, d)
            else:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def apply(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(self.max_depth):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=float))]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            int(d["max_depth"]),
        )


class Presorted:
    """Column-wise sort order of a fixed training matrix, shared by all trees."""

    def __init__(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        self.X = X
        self.order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
        self.values = np.ascontiguousarray(np.take_along_axis(X, self.order.T, axis=0).T)


def grow_tree(data: Presorted, resid, max_depth: int, min_samples_leaf: int,
              in_bag=None) -> RegressionTree:
    """Fit one least-squares regression tree to ``resid``."""
    n = len(resid)
    resid = np.ascontiguousarray(resid, dtype=np.float64)
    node_of = np.zeros(n, dtype=np.int64)
    if in_bag is not None:
        node_of[~in_bag] = -1
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    open_nodes = [0]
    for _depth in range(max_depth + 1):
        if not open_nodes:
            break
        local = np.full(len(feature), -1, dtype=np.int64)
        local[open_nodes] = np.arange(len(open_nodes))
        active = node_of >= 0
        loc = np.where(active, local[np.where(active, node_of, 0)], -1)
        m = len(open_nodes)
        cnt = np.bincount(loc[active], minlength=m).astype(np.int64)
        sums = np.bincount(loc[active], weights=resid[active], minlength=m)
        sumsq = np.bincount(loc[active], weights=resid[active] ** 2, minlength=m)
        for k, node in enumerate(open_nodes):
            value[node] = sums[k] / cnt[k] if cnt[k] else 0.0
        if _depth == max_depth:
            break
        floor = _REL_GAIN_FLOOR * sumsq
        bf, bt, _ = _kernels.best_splits(
            data.values, data.order, resid, loc, m, min_samples_leaf, cnt, sums, floor
        )
        next_open = []
        child_of = np.full((m, 2), -1, dtype=np.int64)
        for k, node in enumerate(open_nodes):
            if bf[k] < 0:
                continue
            feature[node], threshold[node] = int(bf[k]), float(bt[k])
            for side in (0, 1):
                child_of[k, side] = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
                next_open.append(child_of[k, side])
            left[node], right[node] = int(child_of[k, 0]), int(child_of[k, 1])
        if not next_open:
            break
        split_rows = active & (bf[np.where(active, loc, 0)] >= 0)
        r = np.flatnonzero(split_rows)
        kk = loc[r]
        go_left = data.X[r, bf[kk]] <= bt[kk]
        node_of[r] = np.where(go_left, child_of[kk, 0], child_of[kk, 1])
        done = active & ~split_rows
        node_of[done] = -1
        open_nodes = [int(c) for c in next_open]
    return RegressionTree(
        np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float), int(max_depth),
    )


class GradientBoostedTrees(RegressorMixin, BaseEstimator):
    """Least-squares gradient boosting over regression trees.

    The model starts from the target mean and each tree fits the current
    residuals; predictions are ``base_ + learning_rate * sum(tree(x))``.
    ``subsample < 1`` fits each tree on a seeded random fraction of rows.

    Attributes set by ``fit``: ``base_``, ``trees_``, ``train_loss_`` (mean
    squared residual before any tree, then after each tree) and
    ``n_features_in_``.
    """

    def __init__(self, n_trees=200, learning_rate=0.1, max_depth=4, min_samples_leaf=5,
                 subsample=1.0, random_state=0):
        self.n_trees = n_trees
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.random_state = random_state

    def _check_params(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees, max_depth and min_samples_leaf must be positive")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")

    def fit(self, X, y, presorted: Presorted | None = None):
        self._check_params()
        if len(X) < 2:
            raise EmptyDataset("need at least two rows to train")
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        data = presorted if presorted is not None else Presorted(X)
        rng = np.random.default_rng(self.random_state)
        n = len(y)
        self.n_features_in_ = X.shape[1]
        self.base_ = float(np.mean(y))
        pred = np.full(n, self.base_)
        resid = y - pred
        self.train_loss_ = [float(np.mean(resid ** 2))]
        self.trees_ = []
        for _ in range(self.n_trees):
            bag = None
            if self.subsample < 1:
                bag = np.zeros(n, dtype=bool)
                bag[rng.choice(n, max(2, int(round(self.subsample * n))), replace=False)] = True
            tree = grow_tree(data, resid, self.max_depth, self.min_samples_leaf, bag)
            pred = pred + self.learning_rate * tree.predict(X)
            resid = y - pred
            self.trees_.append(tree)
            self.train_loss_.append(float(np.mean(resid ** 2)))
        self._flat = None
        return self

    def _flatten(self):
        if getattr(self, "_flat", None) is None:
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees_[:-1]]).astype(np.int64)
            cat = lambda name, shift: np.concatenate(  # noqa: E731
                [getattr(t, name) + (o if shift else 0) for t, o in zip(self.trees_, offsets)]
            )
            feat = np.concatenate([t.feature for t in self.trees_])
            left = np.where(feat >= 0, cat("left", True), -1)
            right = np.where(feat >= 0, cat("right", True), -1)
            self._flat = (feat, cat("threshold", False), left, right, cat("value", False), offsets)
        return self._flat

    def raw_sum(self, X) -> np.ndarray:
        """Sum of tree outputs (without base or learning rate)."""
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return _kernels.ensemble_sum(np.ascontiguousarray(X), *self._flatten())

    def predict(self, X) -> np.ndarray:
        return self.base_ + self.learning_rate * self.raw_sum(X)

    def staged_loss(self, X, y) -> list[float]:
        """Mean squared error after 0, 1, ... trees on any dataset."""
        X = check_array(X, dtype=np.float64)
        pred = np.full(len(X), self.base_)
        out = [float(np.mean((y - pred) ** 2))]
        for t in self.trees_:
            pred = pred + self.learning_rate * t.predict(X)
            out.append(float(np.mean((y - pred) ** 2)))
        return out

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        return {
            "params": self.get_params(),
            "n_features": self.n_features_in_,
            "base": self.base_,
            "train_loss": self.train_loss_,
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d) -> "GradientBoostedTrees":
        model = cls(**d["params"])
        model.n_features_in_ = int(d["n_features"])
        model.base_ = float(d["base"])
        model.train_loss_ = list(d.get("train_loss", []))
        model.trees_ = [RegressionTree.from_dict(t) for t in d["trees"]]
        model._flat = None
        return model
