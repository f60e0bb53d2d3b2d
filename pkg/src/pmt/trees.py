"""Base learners: a CART classification tree and a histogram gradient-boosting
classifier for binary log-loss.

Trees are stored as flat node arrays. A node with ``feature == -1`` is a leaf;
otherwise rows with ``x[feature] <= threshold`` go to ``left``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit

from .errors import FitError

LEAF = -1


# --------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True)
def _grow_cart(X, y, idx, n_sub, min_leaf, max_depth, seed):
    np.random.seed(seed)
    n = idx.shape[0]
    n_features = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    feats = np.arange(n_features)
    vals = np.empty(n)
    work = np.empty(n, np.int64)

    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_start[sp]
        e = st_end[sp]
        depth = st_depth[sp]
        m = e - s
        pos = 0.0
        for i in range(s, e):
            pos += y[idx[i]]
        value[node] = pos / m
        if pos == 0.0 or pos == m or m < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        for i in range(n_sub):
            j = i + np.random.randint(0, n_features - i)
            tmp = feats[i]
            feats[i] = feats[j]
            feats[j] = tmp
        cand = np.sort(feats[:n_sub].copy())

        neg = m - pos
        # maximize sum over children of (pos^2 + neg^2) / size  <=>  minimize weighted Gini
        # a candidate must beat the incumbent by a margin, so near-ties keep the lowest feature/threshold
        tol = 1e-12 * m
        best_score = (pos * pos + neg * neg) / m
        best_f = -1
        best_thr = 0.0
        for ci in range(n_sub):
            f = cand[ci]
            for i in range(m):
                vals[i] = X[idx[s + i], f]
            order = np.argsort(vals[:m], kind="mergesort")
            lp = 0.0
            for t in range(m - 1):
                lp += y[idx[s + order[t]]]
                v0 = vals[order[t]]
                v1 = vals[order[t + 1]]
                if not v0 < v1:
                    continue
                nl = t + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                rp = pos - lp
                ln = nl - lp
                rn = nr - rp
                score = (lp * lp + ln * ln) / nl + (rp * rp + rn * rn) / nr
                if score > best_score + tol:
                    best_score = score
                    best_f = f
                    thr = v0 / 2.0 + v1 / 2.0
                    if thr >= v1 or thr < v0:
                        thr = v0
                    best_thr = thr
        if best_f < 0:
            continue

        nl = 0
        nr = 0
        for i in range(s, e):
            r = idx[i]
            if X[r, best_f] <= best_thr:
                idx[s + nl] = r
                nl += 1
            else:
                work[nr] = r
                nr += 1
        for i in range(nr):
            idx[s + nl + i] = work[i]

        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        # right pushed first so the left subtree is numbered first
        st_node[sp] = rc
        st_start[sp] = s + nl
        st_end[sp] = e
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lc
        st_start[sp] = s
        st_end[sp] = s + nl
        st_depth[sp] = depth + 1
        sp += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _route_leaves(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def _predict_packed(X, feature, threshold, left, right, value, offsets):
    """Per-tree leaf values, shape (n_trees, n_rows). Child indices are tree-local."""
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty((n_trees, n))
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[t, i] = value[base + node]
    return out


@njit(cache=True, nogil=True)
def _node_histogram(B, rows, s, e, grad, hess, n_bins_max):
    d = B.shape[1]
    hg = np.zeros((d, n_bins_max))
    hh = np.zeros((d, n_bins_max))
    hc = np.zeros((d, n_bins_max), np.int64)
    for i in range(s, e):
        r = rows[i]
        g = grad[r]
        h = hess[r]
        for f in range(d):
            b = B[r, f]
            hg[f, b] += g
            hh[f, b] += h
            hc[f, b] += 1
    return hg, hh, hc


@njit(cache=True, nogil=True)
def _best_hist_split(hg, hh, hc, n_bins, G, H, N, l2, min_leaf, min_hess):
    best_gain = 1e-12
    best_f = -1
    best_b = -1
    parent = G * G / (H + l2)
    for f in range(hg.shape[0]):
        gl = 0.0
        hl = 0.0
        cl = 0
        for b in range(n_bins[f] - 1):
            gl += hg[f, b]
            hl += hh[f, b]
            cl += hc[f, b]
            cr = N - cl
            if cl < min_leaf:
                continue
            if cr < min_leaf:
                break
            hr = H - hl
            if hl < min_hess or hr < min_hess:
                continue
            gr = G - gl
            children = gl * gl / (hl + l2) + gr * gr / (hr + l2)
            gain = children - parent
            # relative tolerance so float noise cannot beat an earlier (lower) feature on a tie
            if gain > best_gain + 1e-12 * children:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


@njit(cache=True, nogil=True)
def _grow_hist_tree(B, n_bins, grad, hess, max_leaves, min_leaf, l2, lr, max_depth, min_hess):
    n = B.shape[0]
    n_bins_max = 1
    for f in range(n_bins.shape[0]):
        if n_bins[f] > n_bins_max:
            n_bins_max = n_bins[f]
    cap = 2 * max_leaves + 1
    feature = np.full(cap, -1, np.int64)
    bin_thr = np.full(cap, -1, np.int64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    n_start = np.zeros(cap, np.int64)
    n_end = np.zeros(cap, np.int64)
    n_depth = np.zeros(cap, np.int64)
    n_G = np.zeros(cap)
    n_H = np.zeros(cap)
    s_gain = np.full(cap, -1.0)
    s_f = np.full(cap, -1, np.int64)
    s_b = np.full(cap, -1, np.int64)
    is_open = np.zeros(cap, np.bool_)
    rows = np.arange(n)
    work = np.empty(n, np.int64)

    G = 0.0
    H = 0.0
    for i in range(n):
        G += grad[i]
        H += hess[i]
    n_nodes = 1
    n_start[0] = 0
    n_end[0] = n
    n_G[0] = G
    n_H[0] = H
    hg, hh, hc = _node_histogram(B, rows, 0, n, grad, hess, n_bins_max)
    s_gain[0], s_f[0], s_b[0] = _best_hist_split(hg, hh, hc, n_bins, G, H, n, l2, min_leaf, min_hess)
    is_open[0] = True
    n_leaves = 1
    while n_leaves < max_leaves:
        node = -1
        best = 0.0
        for k in range(n_nodes):
            if is_open[k] and s_f[k] >= 0 and s_gain[k] > best:
                if max_depth >= 0 and n_depth[k] >= max_depth:
                    continue
                best = s_gain[k]
                node = k
        if node < 0:
            break
        f = s_f[node]
        b = s_b[node]
        s = n_start[node]
        e = n_end[node]
        nl = 0
        nr = 0
        gl = 0.0
        hl = 0.0
        for i in range(s, e):
            r = rows[i]
            if B[r, f] <= b:
                rows[s + nl] = r
                nl += 1
                gl += grad[r]
                hl += hess[r]
            else:
                work[nr] = r
                nr += 1
        for i in range(nr):
            rows[s + nl + i] = work[i]
        feature[node] = f
        bin_thr[node] = b
        is_open[node] = False
        for c in range(2):
            k = n_nodes
            n_nodes += 1
            if c == 0:
                left[node] = k
                n_start[k] = s
                n_end[k] = s + nl
                n_G[k] = gl
                n_H[k] = hl
            else:
                right[node] = k
                n_start[k] = s + nl
                n_end[k] = e
                n_G[k] = n_G[node] - gl
                n_H[k] = n_H[node] - hl
            n_depth[k] = n_depth[node] + 1
            cnt = n_end[k] - n_start[k]
            if cnt >= 2 * min_leaf:
                hg, hh, hc = _node_histogram(B, rows, n_start[k], n_end[k], grad, hess, n_bins_max)
                s_gain[k], s_f[k], s_b[k] = _best_hist_split(
                    hg, hh, hc, n_bins, n_G[k], n_H[k], cnt, l2, min_leaf, min_hess)
            is_open[k] = True
        n_leaves += 1

    update = np.empty(n)
    for k in range(n_nodes):
        if feature[k] < 0:
            v = -lr * n_G[k] / (n_H[k] + l2)
            value[k] = v
            for i in range(n_start[k], n_end[k]):
                update[rows[i]] = v
    return (feature[:n_nodes].copy(), bin_thr[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), update)


# --------------------------------------------------------------------------
# tree containers


def _as_matrix(X, width=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError("expected a 2-D feature matrix")
    if width is not None and X.shape[1] != width:
        raise ValueError(f"row width {X.shape[1]} does not match model width {width}")
    return np.ascontiguousarray(X)


@dataclass(frozen=True)
class Tree:
    """Flat binary tree. ``value`` is meaningful at leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int

    def __post_init__(self):
        for name in ("feature", "left", "right"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        for name in ("threshold", "value"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.feature)
        if n == 0 or any(len(getattr(self, a)) != n for a in ("threshold", "left", "right", "value")):
            raise ValueError("tree node arrays must be non-empty and equally long")
        split = self.feature >= 0
        if (self.feature[split] >= self.n_features).any():
            raise ValueError("split feature index out of range")
        kids = np.concatenate([self.left[split], self.right[split]])
        if (kids <= 0).any() or (kids >= n).any() or len(np.unique(kids)) != len(kids):
            raise ValueError("malformed child pointers")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return _route_leaves(X, self.feature, self.threshold, self.left, self.right)

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"]), np.array(d["threshold"], dtype=float), np.array(d["left"]),
                   np.array(d["right"]), np.array(d["value"], dtype=float), int(d["n_features"]))


class DecisionTree(Tree):
    """Classification tree whose leaves hold the Killed proportion."""

    def predict_proba(self, X) -> np.ndarray:
        return self.predict_value(X)


def pack_trees(trees) -> tuple[np.ndarray, ...]:
    """Concatenate node arrays of several trees for the batched predictor."""
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([t.n_nodes for t in trees])
    cat = lambda attr: np.concatenate([getattr(t, attr) for t in trees])  # noqa: E731
    return cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"), offsets


def predict_packed(packed, X) -> np.ndarray:
    return _predict_packed(np.ascontiguousarray(X, dtype=np.float64), *packed)


# --------------------------------------------------------------------------
# CART


@dataclass(frozen=True)
class TreeConfig:
    max_features_fraction: float = 1.0
    min_samples_leaf: int = 1
    max_depth: int | None = None
    criterion: str = "gini"

    def __post_init__(self):
        if not 0.0 < self.max_features_fraction <= 1.0:
            raise ValueError("max_features_fraction must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.criterion != "gini":
            raise ValueError("only the gini criterion is supported")

    def n_candidates(self, n_features: int) -> int:
        # 1e-9 guards against 0.7 * 30 = 21.000000000000004
        return max(1, min(n_features, math.ceil(self.max_features_fraction * n_features - 1e-9)))


def _binary_labels(y, n_rows) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_rows,):
        raise ValueError("need exactly one label per row")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return y.astype(np.float64)


def fit_tree(X, y, cfg: TreeConfig = TreeConfig(), seed: int = 0, sample_index=None) -> DecisionTree:
    """Greedy Gini CART grown until purity or a stopping constraint.

    ``sample_index`` (optional) lists the training rows, with repeats acting
    as weights; this is how bootstrap samples are passed without copying.
    """
    X = _as_matrix(X)
    if X.shape[0] == 0:
        raise FitError("cannot fit a tree on an empty sample")
    if X.shape[1] == 0:
        raise FitError("cannot fit a tree without features")
    yf = _binary_labels(y, X.shape[0])
    idx = np.arange(X.shape[0], dtype=np.int64) if sample_index is None else np.array(sample_index, dtype=np.int64)
    if len(idx) == 0:
        raise FitError("cannot fit a tree on an empty sample")
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth
    arrays = _grow_cart(X, yf, idx, cfg.n_candidates(X.shape[1]), cfg.min_samples_leaf, max_depth,
                        int(seed) % (2**32))
    return DecisionTree(*arrays, n_features=X.shape[1])


def predict_proba_tree(tree: DecisionTree, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = tree.predict_proba(x)
    return float(out[0]) if x.ndim == 1 else out


# --------------------------------------------------------------------------
# gradient boosting


@dataclass(frozen=True)
class GbConfig:
    n_iterations: int = 100
    learning_rate: float = 0.1
    max_leaf_nodes: int = 31
    n_bins: int = 255
    l2_regularization: float = 0.0
    min_samples_leaf: int = 20
    max_depth: int | None = None

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_leaf_nodes < 2:
            raise ValueError("max_leaf_nodes must be >= 2")
        if not 2 <= self.n_bins <= 256:
            raise ValueError("n_bins must lie in [2, 256]")
        if self.l2_regularization < 0:
            raise ValueError("l2_regularization must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


def bin_thresholds(column: np.ndarray, n_bins: int) -> np.ndarray:
    """Upper bin edges; a value ``v`` falls in bin ``searchsorted(edges, v)``.

    With at most ``n_bins`` distinct values every value gets its own bin and
    the edges are midpoints between neighbours, so binned splits coincide with
    exact ones.
    """
    distinct = np.unique(column)
    if len(distinct) <= n_bins:
        lo, hi = distinct[:-1], distinct[1:]
        mids = lo / 2.0 + hi / 2.0
        return np.where((mids >= hi) | (mids < lo), lo, mids)
    pct = np.linspace(0, 100, n_bins + 1)[1:-1]
    return np.unique(np.percentile(column, pct, method="midpoint"))


def bin_matrix(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    B = np.empty(X.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        B[:, j] = np.searchsorted(e, X[:, j], side="left")
    return B


def log_loss_from_raw(raw: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^r) - y r, computed stably
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


class RegressionTree(Tree):
    """Boosting stage; leaf values are already scaled by the learning rate."""


@dataclass
class GradientBoostedModel:
    baseline: float
    trees: list = field(default_factory=list)
    n_features: int = 0
    loss_trace: list | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self._packed = None

    def raw_score(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        out = np.full(X.shape[0], self.baseline)
        if self.trees:
            if self._packed is None:
                self._packed = pack_trees(self.trees)
            # sequential accumulation keeps the sum independent of batching
            for contrib in predict_packed(self._packed, X):
                out += contrib
        return out

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.raw_score(X))

    def to_dict(self) -> dict:
        return {"baseline": self.baseline, "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GradientBoostedModel":
        trees = [RegressionTree.from_dict(t) for t in d["trees"]]
        return cls(float(d["baseline"]), trees, int(d["n_features"]))


def fit_gb(X, y, cfg: GbConfig = GbConfig(), record_loss: bool = False) -> GradientBoostedModel:
    """Binary log-loss boosting with Newton leaf values on binned features."""
    X = _as_matrix(X)
    yf = _binary_labels(y, X.shape[0])
    rate = yf.mean() if len(yf) else 0.0
    if not 0.0 < rate < 1.0:
        raise FitError("gradient boosting needs both classes in the training labels")
    edges = [bin_thresholds(X[:, j], cfg.n_bins) for j in range(X.shape[1])]
    B = bin_matrix(X, edges)
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    baseline = math.log(rate / (1.0 - rate))
    raw = np.full(len(yf), baseline)
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth
    trees = []
    trace = [log_loss_from_raw(raw, yf)] if record_loss else None
    for _ in range(cfg.n_iterations):
        p = expit(raw)
        grad = p - yf
        hess = p * (1.0 - p)
        feat, bthr, left, right, value, update = _grow_hist_tree(
            B, n_bins, grad, hess, cfg.max_leaf_nodes, cfg.min_samples_leaf,
            cfg.l2_regularization, cfg.learning_rate, max_depth, 1e-3)
        thr = np.zeros(len(feat))
        split = feat >= 0
        for k in np.flatnonzero(split):
            thr[k] = edges[feat[k]][bthr[k]]
        trees.append(RegressionTree(feat, thr, left, right, value, X.shape[1]))
        raw += update
        if record_loss:
            trace.append(log_loss_from_raw(raw, yf))
    return GradientBoostedModel(baseline, trees, X.shape[1], trace)


def predict_proba_gb(model: GradientBoostedModel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = model.predict_proba(x)
    return float(out[0]) if x.ndim == 1 else out
