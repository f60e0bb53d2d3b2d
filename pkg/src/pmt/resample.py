"""ADASYN minority oversampling.

Neighbor search runs on min-max scaled copies of the features; synthetic rows
are interpolated in the original (unscaled) coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError


@dataclass(frozen=True)
class AdasynConfig:
    k: int = 5
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class AdasynResult:
    X: np.ndarray
    y: np.ndarray
    parents: np.ndarray  # row index of the seed minority point, per synthetic row
    partners: np.ndarray  # row index of the minority neighbor interpolated towards
    lambdas: np.ndarray
    allocation: np.ndarray  # synthetics per minority row, aligned with minority_rows
    minority_rows: np.ndarray

    @property
    def n_synthetic(self) -> int:
        return len(self.parents)


def minmax_scale(X: np.ndarray) -> np.ndarray:
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span[span == 0] = 1.0
    return (X - lo) / span


def _knn_rows(points: np.ndarray, queries: np.ndarray, k: int, chunk_cells: int = 2_000_000) -> np.ndarray:
    """k nearest rows of ``points`` for each query row index, self excluded.

    Sorted by squared Euclidean distance; ties go to the lower row index.
    """
    n, d = points.shape
    queries = np.asarray(queries, dtype=np.int64)
    out = np.empty((len(queries), k), dtype=np.int64)
    step = max(1, chunk_cells // max(n, 1))
    for start in range(0, len(queries), step):
        q = queries[start:start + step]
        d2 = np.zeros((len(q), n))
        for f in range(d):
            diff = points[q, f][:, None] - points[None, :, f]
            d2 += diff * diff
        d2[np.arange(len(q)), q] = np.inf
        out[start:start + len(q)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn_indices(points: np.ndarray, query_row: int, k: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if not 1 <= k < len(points):
        raise ValueError(f"k={k} out of range for {len(points)} rows")
    return _knn_rows(points, np.array([query_row]), k)[0]


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    quota = weights * total
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        frac = quota - base
        order = np.argsort(-frac, kind="stable")
        base[order[:short]] += 1
    return base


def adasyn_detailed(X, y, cfg: AdasynConfig = AdasynConfig()) -> AdasynResult:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) != 2:
        raise FitError("ADASYN needs exactly two classes")
    n = len(X)
    if cfg.k >= n:
        raise ValueError(f"k={cfg.k} must be smaller than the number of rows ({n})")
    minority = classes[np.argmin(counts)]
    m_min, m_maj = counts.min(), counts.max()
    minority_rows = np.flatnonzero(y == minority)
    G = int(math.floor((m_maj - m_min) * cfg.beta + 0.5))
    empty = np.empty(0, dtype=np.int64)
    if G == 0:
        return AdasynResult(X.copy(), y.copy(), empty, empty, np.empty(0),
                            np.zeros(len(minority_rows), dtype=np.int64), minority_rows)

    Xs = minmax_scale(X)
    nn = _knn_rows(Xs, minority_rows, cfg.k)
    ratio = (y[nn] != minority).sum(axis=1) / cfg.k
    if ratio.sum() > 0:
        weights = ratio / ratio.sum()
    else:
        weights = np.full(len(minority_rows), 1.0 / len(minority_rows))
    alloc = _largest_remainder(weights, G)

    k_min = min(cfg.k, len(minority_rows) - 1)
    parents = np.repeat(minority_rows, alloc)
    rng = np.random.default_rng(cfg.seed)
    if k_min >= 1:
        local = _knn_rows(Xs[minority_rows], np.arange(len(minority_rows)), k_min)
        seed_pos = np.repeat(np.arange(len(minority_rows)), alloc)
        pick = rng.integers(0, k_min, size=G)
        partners = minority_rows[local[seed_pos, pick]]
    else:
        partners = parents.copy()
    lambdas = rng.random(G)
    synth = X[parents] + lambdas[:, None] * (X[partners] - X[parents])
    X_out = np.vstack([X, synth])
    y_out = np.concatenate([y, np.full(G, minority, dtype=y.dtype)])
    return AdasynResult(X_out, y_out, parents, partners, lambdas, alloc, minority_rows)


def adasyn(X, y, cfg: AdasynConfig = AdasynConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Oversample the minority class; original rows come first, unchanged."""
    res = adasyn_detailed(X, y, cfg)
    return res.X, res.y
