"""Bagged regression trees with variance-reduction splits.

Split search runs on quantile-binned feature codes (at most 255 bins per
feature), which makes each node a single vectorized pass: one bincount of
(feature, bin) cells accumulating counts, sums and the best SSE reduction.
Predictions average leaf means across trees.

Fitting canonicalizes the training rows (lexicographic sort of (X, y))
before any randomness is consumed, so forests are invariant to the row
order of the training data given the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 15
    min_leaf: int = 5
    features_per_split: str | int = "all"
    bootstrap: bool = True
    max_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


class _Tree:
    """Flat-array regression tree over binned feature codes."""

    __slots__ = ("feature", "threshold_bin", "left", "right", "value")

    def __init__(self):
        self.feature = []
        self.threshold_bin = []
        self.left = []
        self.right = []
        self.value = []

    def add_node(self):
        self.feature.append(-1)
        self.threshold_bin.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.value) - 1

    def finalize(self):
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold_bin = np.asarray(self.threshold_bin, dtype=np.int32)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.value = np.asarray(self.value, dtype=np.float64)

    def predict_codes(self, codes: np.ndarray) -> np.ndarray:
        n = codes.shape[0]
        node = np.zeros(n, dtype=np.int32)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = codes[idx, self.feature[nd]] <= self.threshold_bin[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]


def _bin_features(X: np.ndarray, max_bins: int):
    """Quantile-bin each feature; returns (uint8/uint16 codes, bin edges)."""
    n, d = X.shape
    codes = np.empty((n, d), dtype=np.int16)
    edges = []
    for j in range(d):
        col = X[:, j]
        uniq = np.unique(col)
        if len(uniq) <= max_bins:
            cut = (uniq[:-1] + uniq[1:]) / 2.0
        else:
            qs = np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
            cut = np.unique(qs)
        codes[:, j] = np.searchsorted(cut, col, side="right")
        edges.append(cut)
    return codes, edges


def _grow_tree(codes, y, order_rows, cfg: ForestConfig, n_bins_per_feat, rng):
    n, d = codes.shape
    if cfg.features_per_split == "all":
        n_feat = d
    elif cfg.features_per_split == "sqrt":
        n_feat = max(1, int(np.sqrt(d)))
    else:
        n_feat = max(1, min(int(cfg.features_per_split), d))

    tree = _Tree()
    root = tree.add_node()
    # stack of (node_id, row_indices, depth)
    stack = [(root, order_rows, 0)]
    total_bins = int(n_bins_per_feat.sum())
    offsets = np.concatenate(([0], np.cumsum(n_bins_per_feat)))[:-1]

    while stack:
        node_id, rows, depth = stack.pop()
        y_node = y[rows]
        n_node = len(rows)
        mean = float(y_node.mean())
        tree.value[node_id] = mean
        if depth >= cfg.max_depth or n_node < 2 * cfg.min_leaf:
            continue
        sse_parent = float(((y_node - mean) ** 2).sum())
        if sse_parent <= 1e-24:
            continue

        if n_feat < d:
            feats = np.sort(rng.choice(d, size=n_feat, replace=False))
        else:
            feats = np.arange(d)

        c_node = codes[rows][:, feats]
        flat = (c_node + offsets[feats]).ravel()
        cnt = np.bincount(flat, minlength=total_bins).astype(np.float64)
        s = np.bincount(flat, weights=np.repeat(y_node, len(feats)), minlength=total_bins)

        best_gain, best_feat, best_bin = 0.0, -1, -1
        y_sum = float(y_node.sum())
        for k, j in enumerate(feats):
            lo, hi = offsets[j], offsets[j] + n_bins_per_feat[j]
            c_cum = np.cumsum(cnt[lo:hi])[:-1]
            s_cum = np.cumsum(s[lo:hi])[:-1]
            n_l, n_r = c_cum, n_node - c_cum
            ok = (n_l >= cfg.min_leaf) & (n_r >= cfg.min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = s_cum**2 / n_l + (y_sum - s_cum) ** 2 / n_r
            gain = np.where(ok, gain, -np.inf)
            b = int(np.argmax(gain))
            g = float(gain[b]) - y_sum**2 / n_node
            if g > best_gain + 1e-12:
                best_gain, best_feat, best_bin = g, int(j), b

        if best_feat < 0:
            continue
        go_left = codes[rows, best_feat] <= best_bin
        left_rows, right_rows = rows[go_left], rows[~go_left]
        tree.feature[node_id] = best_feat
        tree.threshold_bin[node_id] = best_bin
        left_id = tree.add_node()
        right_id = tree.add_node()
        tree.left[node_id] = left_id
        tree.right[node_id] = right_id
        stack.append((right_id, right_rows, depth + 1))
        stack.append((left_id, left_rows, depth + 1))

    tree.finalize()
    return tree


class RegressionForest:
    """Bagged regression trees; prediction is the across-tree mean."""

    def __init__(self, cfg: ForestConfig):
        self.cfg = cfg
        self.trees: list[_Tree] = []
        self.edges = None
        self.n_features = None

    def fit(self, X, y, rng: np.random.Generator | None = None) -> "RegressionForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.ndim != 2:
            raise ValueError("X must be 2-d")
        n, d = X.shape
        if n == 0:
            raise ValueError("empty training input")
        if len(y) != n:
            raise ValueError("X and y length mismatch")
        if n < self.cfg.min_leaf:
            raise ValueError(f"n={n} smaller than min_leaf={self.cfg.min_leaf}")
        if rng is None:
            rng = np.random.default_rng(self.cfg.seed)

        # canonical row order: forests depend on the row multiset only
        order = np.lexsort(np.vstack([y[None, :], X.T[::-1]]))
        X, y = X[order], y[order]

        codes, self.edges = _bin_features(X, self.cfg.max_bins)
        self.n_features = d
        n_bins = np.array([len(e) + 1 for e in self.edges], dtype=np.int64)

        self.trees = []
        for _ in range(self.cfg.n_trees):
            tree_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
            if self.cfg.bootstrap:
                rows = np.sort(tree_rng.integers(0, n, size=n))
            else:
                rows = np.arange(n)
            self.trees.append(_grow_tree(codes, y, rows, self.cfg, n_bins, tree_rng))
        return self

    def _encode(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"feature matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
                f"forest was trained on {self.n_features}"
            )
        codes = np.empty(X.shape, dtype=np.int16)
        for j, cut in enumerate(self.edges):
            codes[:, j] = np.searchsorted(cut, X[:, j], side="right")
        return codes

    def predict(self, X) -> np.ndarray:
        if not self.trees:
            raise ValueError("forest is not fitted")
        codes = self._encode(X)
        out = np.zeros(codes.shape[0])
        for tree in self.trees:
            out += tree.predict_codes(codes)
        return out / len(self.trees)
