"""Least-squares gradient boosting over histogram-binned regression trees."""
from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)


class _Binner:
    def __init__(self, n_bins: int):
        self.n_bins = n_bins
        self.edges: list[np.ndarray] = []

    def fit(self, X):
        qs = np.linspace(0, 1, self.n_bins + 1)[1:-1]
        self.edges = [np.unique(np.quantile(col, qs)) for col in X.T]
        return self

    def transform(self, X):
        # bin b holds values in (edges[b-1], edges[b]]
        return np.stack([np.searchsorted(e, col, side="left") for e, col in zip(self.edges, X.T)], axis=1)


class RegressionTree:
    """Flat-array tree; ``feature == -1`` marks a leaf."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def _add(self, value, feature=-1, threshold=0.0):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def finalize(self):
        self.feature = np.asarray(self.feature, dtype=int)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=int)
        self.right = np.asarray(self.right, dtype=int)
        self.value = np.asarray(self.value, dtype=float)
        return self

    def predict(self, X):
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        t = cls()
        for k in ("feature", "threshold", "left", "right", "value"):
            setattr(t, k, d[k])
        return t.finalize()


class GradientBoostedTrees:
    def __init__(self, n_trees=200, max_depth=4, learning_rate=0.05, min_samples_leaf=5,
                 n_bins=64, validation_fraction=0.2, n_iter_no_change=20, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.n_bins = n_bins
        self.validation_fraction = validation_fraction
        self.n_iter_no_change = n_iter_no_change
        self.seed = seed
        self.base = 0.0
        self.trees: list[RegressionTree] = []

    def _build(self, codes, X, r, idx, depth, tree, binner):
        value = float(r[idx].mean())
        node = tree._add(value)
        if depth >= self.max_depth or len(idx) < 2 * self.min_samples_leaf:
            return node
        p = codes.shape[1]
        B = self.n_bins
        flat = (codes[idx] + np.arange(p) * B).ravel()
        ri = np.repeat(r[idx], p)
        sums = np.bincount(flat, weights=ri, minlength=p * B).reshape(p, B)
        counts = np.bincount(flat, minlength=p * B).reshape(p, B)
        SL = np.cumsum(sums, axis=1)
        NL = np.cumsum(counts, axis=1)
        S, N = SL[0, -1], NL[0, -1]
        SR, NR = S - SL, N - NL
        ok = (NL >= self.min_samples_leaf) & (NR >= self.min_samples_leaf)
        n_edges = np.array([len(e) for e in binner.edges])
        ok &= np.arange(B)[None, :] < n_edges[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, SL ** 2 / NL + SR ** 2 / NR - S ** 2 / N, -np.inf)
        best = int(np.argmax(gain))
        f, b = divmod(best, B)
        if not np.isfinite(gain[f, b]) or gain[f, b] <= 1e-12:
            return node
        thr = float(binner.edges[f][b])
        go_left = codes[idx, f] <= b
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = self._build(codes, X, r, idx[go_left], depth + 1, tree, binner)
        tree.right[node] = self._build(codes, X, r, idx[~go_left], depth + 1, tree, binner)
        return node

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.trees = []
        self.base = float(y.mean())
        if np.ptp(y) == 0:
            log.warning("all targets equal; fitting a constant predictor")
            return self
        rng = np.random.default_rng(self.seed)
        n = len(y)
        n_val = int(round(self.validation_fraction * n)) if n >= 20 else 0
        perm = rng.permutation(n)
        val, trn = perm[:n_val], perm[n_val:]
        binner = _Binner(self.n_bins).fit(X[trn])
        codes = binner.transform(X)
        pred = np.full(n, self.base)
        best_loss, best_n, stall = np.inf, 0, 0
        for _ in range(self.n_trees):
            r = y - pred
            tree = RegressionTree()
            self._build(codes, X, r, trn, 0, tree, binner)
            tree.finalize()
            pred += self.learning_rate * tree.predict(X)
            self.trees.append(tree)
            if n_val:
                loss = float(np.mean((y[val] - pred[val]) ** 2))
                if loss < best_loss - 1e-12:
                    best_loss, best_n, stall = loss, len(self.trees), 0
                else:
                    stall += 1
                    if stall >= self.n_iter_no_change:
                        break
        if n_val:
            self.trees = self.trees[:max(best_n, 1)]
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        out = np.full(len(X), self.base)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self):
        params = {k: getattr(self, k) for k in ("n_trees", "max_depth", "learning_rate", "min_samples_leaf",
                                                "n_bins", "validation_fraction", "n_iter_no_change", "seed")}
        return {"params": params, "base": self.base, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        model = cls(**d["params"])
        model.base = d["base"]
        model.trees = [RegressionTree.from_dict(t) for t in d["trees"]]
        return model
