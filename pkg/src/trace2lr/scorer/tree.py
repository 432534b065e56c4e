"""Histogram-based regression trees with learned missing-value directions.

A tree is grown on per-sample gradient/hessian matrices ``G``/``H`` of shape
(n, C): every split maximises the summed second-order gain over the C
outputs, every leaf stores ``-G / (H + l2)`` per output. Boosting passes one
output (a class gradient); a classification tree passes ``G = -w * onehot``
and ``H = w``, which turns the gain into the weighted Gini decrease and the
leaf into class frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

MAX_BINS = 255


class Binner:
    """Quantile bin edges per feature, fitted on non-missing training values.

    Row ``x`` falls in bin ``b`` iff ``edges[b-1] < x <= edges[b]``; NaN goes
    to ``missing_bin``, the slot after the last value bin of any feature.
    """

    def __init__(self, max_bins: int = MAX_BINS):
        if not 2 <= max_bins <= MAX_BINS:
            raise ValueError(f"max_bins must lie in [2, {MAX_BINS}]")
        self.max_bins = max_bins
        self.edges: list[np.ndarray] = []
        self.missing_bin = 1

    @property
    def n_slots(self) -> int:
        return self.missing_bin + 1

    def fit(self, X: np.ndarray) -> "Binner":
        self.edges = []
        for f in range(X.shape[1]):
            col = X[:, f]
            vals = np.unique(col[~np.isnan(col)])
            if vals.size <= self.max_bins:
                edges = (vals[:-1] + vals[1:]) / 2
            else:
                qs = np.quantile(vals, np.linspace(0, 1, self.max_bins + 1)[1:-1])
                edges = np.unique(qs)
            self.edges.append(edges)
        self.missing_bin = max((e.size + 1 for e in self.edges), default=1)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.uint8)
        for f, edges in enumerate(self.edges):
            col = X[:, f]
            b = np.searchsorted(edges, col, side="left")
            b[np.isnan(col)] = self.missing_bin
            out[:, f] = b
        return out

    def threshold(self, feature: int, b: int) -> float:
        edges = self.edges[feature]
        return float(edges[b]) if b < edges.size else np.inf


@dataclass
class Tree:
    feature: np.ndarray      # -1 at leaves
    threshold: np.ndarray    # go left iff x <= threshold
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # (n_nodes, C), meaningful at leaves
    count: np.ndarray        # training rows reaching the node
    outputs: np.ndarray      # which model classes the C columns feed

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            x = X[active, self.feature[nd]]
            go_left = np.where(np.isnan(x), self.missing_left[nd], x <= self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [None if np.isinf(t) else float(t) for t in self.threshold],
            "missing_left": self.missing_left.astype(int).tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
            "outputs": self.outputs.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray([np.inf if t is None else t for t in d["threshold"]], dtype=float),
            np.asarray(d["missing_left"], dtype=bool),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1),
            np.asarray(d["count"], dtype=np.int64),
            np.asarray(d["outputs"], dtype=np.int64),
        )


@njit(cache=True, nogil=True)
def _histograms(Xb, rows, G, H, n_slots):
    """(C, F, n_slots) gradient and hessian sums plus (F, n_slots) counts."""
    n_feat = Xb.shape[1]
    C = G.shape[1]
    gh = np.zeros((C, n_feat, n_slots))
    hh = np.zeros((C, n_feat, n_slots))
    count = np.zeros((n_feat, n_slots), dtype=np.int64)
    for i in rows:
        for f in range(n_feat):
            b = Xb[i, f]
            count[f, b] += 1
            for c in range(C):
                gh[c, f, b] += G[i, c]
                hh[c, f, b] += H[i, c]
    return gh, hh, count


@njit(cache=True, nogil=True)
def _leaf_score(g, h, l2):
    s = 0.0
    for c in range(g.shape[0]):
        d = h[c] + l2
        if d > 0:
            s += g[c] * g[c] / d
    return s


@njit(cache=True, nogil=True)
def _best_split(gh, hh, count, l2, min_leaf, feature_mask):
    """Best (gain, feature, bin, missing_left); feature -1 if none is valid.

    Candidates are scanned missing-right first, then missing-left, features and
    bins ascending; only a strictly larger gain replaces the incumbent.
    """
    C, n_feat, n_slots = gh.shape
    miss = n_slots - 1
    G = np.zeros(C)
    Hs = np.zeros(C)
    for c in range(C):
        for b in range(n_slots):
            G[c] += gh[c, 0, b]
            Hs[c] += hh[c, 0, b]
    N = 0
    for b in range(n_slots):
        N += count[0, b]
    parent = _leaf_score(G, Hs, l2)

    best_gain = -np.inf
    best_f, best_b, best_ml = -1, -1, False
    gl = np.zeros(C)
    hl = np.zeros(C)
    gr = np.zeros(C)
    hr = np.zeros(C)
    for ml in (False, True):
        for f in range(n_feat):
            if not feature_mask[f]:
                continue
            nl = count[f, miss] if ml else 0
            for c in range(C):
                gl[c] = gh[c, f, miss] if ml else 0.0
                hl[c] = hh[c, f, miss] if ml else 0.0
            for b in range(miss):
                nl += count[f, b]
                hl_tot = 0.0
                hr_tot = 0.0
                for c in range(C):
                    gl[c] += gh[c, f, b]
                    hl[c] += hh[c, f, b]
                    gr[c] = G[c] - gl[c]
                    hr[c] = Hs[c] - hl[c]
                    hl_tot += hl[c]
                    hr_tot += hr[c]
                nr = N - nl
                if nl < min_leaf or nr < min_leaf or hl_tot <= 0 or hr_tot <= 0:
                    continue
                gain = _leaf_score(gl, hl, l2) + _leaf_score(gr, hr, l2) - parent
                if gain > best_gain:
                    best_gain, best_f, best_b, best_ml = gain, f, b, ml
    if best_f >= 0 and count[best_f, miss] == 0:
        # no missing rows seen here: send future missing values to the larger child
        n_left = 0
        for b in range(best_b + 1):
            n_left += count[best_f, b]
        best_ml = n_left >= N - n_left
    return best_gain, best_f, best_b, best_ml


def grow_tree(
    Xb: np.ndarray,
    binner: Binner,
    G: np.ndarray,
    H: np.ndarray,
    rows: np.ndarray,
    *,
    max_depth: int | None,
    min_samples_leaf: int,
    l2: float,
    scale: float = 1.0,
    outputs=None,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
    min_gain: float = 1e-12,
) -> Tree:
    """Depth-first growth with histogram subtraction for the larger child."""
    n_feat = Xb.shape[1]
    C = G.shape[1]
    feature, threshold, missing_left, left, right, value, counts = [], [], [], [], [], [], []

    def new_node(rows_, gh, hh):
        idx = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        missing_left.append(False)
        left.append(-1)
        right.append(-1)
        Gs = gh[:, 0, :].sum(axis=1)
        d = hh[:, 0, :].sum(axis=1) + l2
        v = np.divide(-Gs, d, out=np.zeros_like(Gs), where=d > 0)
        value.append(scale * v)
        counts.append(rows_.size)
        return idx

    n_slots = binner.n_slots
    all_features = np.ones(n_feat, dtype=np.bool_)
    G = np.ascontiguousarray(G, dtype=float)
    H = np.ascontiguousarray(H, dtype=float)
    rows = np.asarray(rows, dtype=np.int64)
    root_hist = _histograms(Xb, rows, G, H, n_slots)
    stack = [(new_node(rows, *root_hist[:2]), rows, root_hist, 0)]
    while stack:
        node, rows_, (gh, hh, cnt), depth = stack.pop()
        if (max_depth is not None and depth >= max_depth) or rows_.size < 2 * min_samples_leaf:
            continue
        if max_features is not None and max_features < n_feat:
            mask = np.zeros(n_feat, dtype=np.bool_)
            mask[rng.choice(n_feat, size=max_features, replace=False)] = True
        else:
            mask = all_features
        gain, f, b, miss_left = _best_split(gh, hh, cnt, float(l2), min_samples_leaf, mask)
        if f < 0 or gain <= min_gain:
            continue
        f, b, miss_left = int(f), int(b), bool(miss_left)
        bins = Xb[rows_, f]
        go_left = np.where(bins == binner.missing_bin, miss_left, bins <= b)
        lrows, rrows = rows_[go_left], rows_[~go_left]
        if lrows.size <= rrows.size:
            lh = _histograms(Xb, lrows, G, H, n_slots)
            rh = (gh - lh[0], hh - lh[1], cnt - lh[2])
        else:
            rh = _histograms(Xb, rrows, G, H, n_slots)
            lh = (gh - rh[0], hh - rh[1], cnt - rh[2])
        feature[node] = f
        threshold[node] = binner.threshold(f, b)
        missing_left[node] = miss_left
        left[node] = new_node(lrows, lh[0], lh[1])
        right[node] = new_node(rrows, rh[0], rh[1])
        stack.append((right[node], rrows, rh, depth + 1))
        stack.append((left[node], lrows, lh, depth + 1))

    outputs = np.arange(C) if outputs is None else np.asarray(outputs)
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(missing_left, dtype=bool),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float).reshape(len(feature), -1),
        np.asarray(counts, dtype=np.int64),
        outputs.astype(np.int64),
    )
