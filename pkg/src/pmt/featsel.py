"""Permutation importance, Spearman correlation and recursive elimination of
noisy and redundant features."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError
from .metrics import roc_auc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImportanceReport:
    features: list[str]
    importances: np.ndarray  # mean AUC drop over the shuffles
    stds: np.ndarray
    baseline_auc: float

    @property
    def shares(self) -> np.ndarray:
        """Drops clamped at zero, normalized to sum to one (all zero if no drop is positive)."""
        pos = np.clip(self.importances, 0.0, None)
        total = pos.sum()
        return pos / total if total > 0 else np.zeros_like(pos)

    def ranking(self) -> list[tuple[str, float, float]]:
        order = np.argsort(-self.importances, kind="stable")
        shares = self.shares
        return [(self.features[i], float(self.importances[i]), float(shares[i])) for i in order]

    def to_dict(self) -> dict:
        return {
            "baseline_auc": self.baseline_auc,
            "features": [
                {"name": n, "importance": float(i), "std": float(s), "share": float(sh)}
                for n, i, s, sh in zip(self.features, self.importances, self.stds, self.shares)
            ],
        }


def permutation_importance(model, X_valid, y_valid, repeats: int = 5, seed: int = 0,
                           feature_names: Sequence[str] | None = None, threads: int = 1) -> ImportanceReport:
    """AUC drop when one column is shuffled, averaged over ``repeats`` shuffles.

    The shuffle of column j in repeat r is seeded by (seed, j, r).
    """
    X = np.ascontiguousarray(X_valid, dtype=np.float64)
    y = np.asarray(y_valid)
    if len(X) == 0:
        raise ValueError("validation set is empty")
    if len(np.unique(y)) < 2:
        raise UndefinedMetricError("permutation importance needs both classes in the validation labels")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    baseline = roc_auc(model.predict_proba(X), y)

    def one(j):
        drops = np.empty(repeats)
        Xp = X.copy()
        for r in range(repeats):
            rng = np.random.default_rng([seed, j, r])
            Xp[:, j] = rng.permutation(X[:, j])
            drops[r] = baseline - roc_auc(model.predict_proba(Xp), y)
        return drops

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            drops = list(pool.map(one, range(X.shape[1])))
    else:
        drops = [one(j) for j in range(X.shape[1])]
    drops = np.array(drops).reshape(X.shape[1], repeats)
    return ImportanceReport(names, drops.mean(axis=1), drops.std(axis=1), baseline)


def spearman_rho(x, y) -> float:
    """Pearson correlation of tie-averaged ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D and equally long")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    rx = rankdata(x) - (len(x) + 1) / 2.0
    ry = rankdata(y) - (len(y) + 1) / 2.0
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("Spearman's rho is undefined for a constant vector")
    rho = float(rx @ ry) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, rho)))


def spearman_matrix(X) -> np.ndarray:
    """Pairwise rho between columns; NaN where a column is constant."""
    X = np.asarray(X, dtype=np.float64)
    R = np.apply_along_axis(rankdata, 0, X)
    R -= R.mean(axis=0)
    norms = np.sqrt((R * R).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        C = (R.T @ R) / np.outer(norms, norms)
    C[:, norms == 0] = np.nan
    C[norms == 0, :] = np.nan
    return np.clip(C, -1.0, 1.0)


@dataclass
class EliminationRound:
    removed: str
    reason: str  # "redundant" or "noisy"
    importance: float
    share: float
    partner: str | None = None
    rho: float | None = None

    def to_dict(self) -> dict:
        d = {"removed": self.removed, "reason": self.reason, "importance": self.importance, "share": self.share}
        if self.reason == "redundant":
            d.update(partner=self.partner, rho=self.rho)
        return d


@dataclass
class EliminationTrace:
    initial: list[str]
    rounds: list[EliminationRound] = field(default_factory=list)
    selected: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    final_importance: ImportanceReport | None = None
    model: object = field(default=None, repr=False)

    @property
    def removed(self) -> list[str]:
        return [r.removed for r in self.rounds]

    def to_dict(self) -> dict:
        return {
            "initial": list(self.initial),
            "rounds": [r.to_dict() for r in self.rounds],
            "selected": list(self.selected),
            "warnings": list(self.warnings),
            "final_importance": None if self.final_importance is None else self.final_importance.to_dict(),
        }


def _most_correlated_pair(rho: np.ndarray, active: list[int], threshold: float):
    best = None
    for a in range(len(active)):
        for b in range(a + 1, len(active)):
            r = rho[active[a], active[b]]
            if np.isfinite(r) and abs(r) > threshold and (best is None or abs(r) > abs(best[2])):
                best = (a, b, float(r))
    return best


def recursive_elimination(
    X_train, y_train, X_valid, y_valid, feature_names: Sequence[str],
    fit: Callable, *, X_corr=None, importance_threshold: float = 0.01, rho_threshold: float = 0.9,
    repeats: int = 5, seed: int = 0, threads: int = 1,
) -> EliminationTrace:
    """Drop one feature per round until no feature is redundant or noisy.

    Each round refits ``fit(X_train_subset, y_train, names)`` and measures
    permutation importance on the validation data. A redundant feature (the
    less important member of the most correlated pair with |rho| above
    ``rho_threshold``) is removed before any noisy one (importance share
    below ``importance_threshold``; lowest importance first). Correlations
    come from ``X_corr`` (default ``X_train``).
    """
    names = list(feature_names)
    if len(names) < 2:
        raise ValueError("elimination needs at least two features")
    X_train = np.asarray(X_train, dtype=np.float64)
    X_valid = np.asarray(X_valid, dtype=np.float64)
    rho = spearman_matrix(X_train if X_corr is None else X_corr)
    active = list(range(len(names)))
    trace = EliminationTrace(initial=names)
    while True:
        cols = [names[i] for i in active]
        model = fit(X_train[:, active], y_train, cols)
        report = permutation_importance(model, X_valid[:, active], y_valid, repeats, seed, cols, threads)
        trace.model, trace.final_importance = model, report
        imp, shares = report.importances, report.shares

        pair = _most_correlated_pair(rho, active, rho_threshold)
        if pair is not None:
            a, b, r = pair
            drop, keep = (b, a) if imp[b] <= imp[a] else (a, b)
            step = EliminationRound(cols[drop], "redundant", float(imp[drop]), float(shares[drop]),
                                    partner=cols[keep], rho=r)
        else:
            noisy = [i for i in range(len(active)) if shares[i] < importance_threshold]
            if not noisy:
                break
            drop = min(noisy, key=lambda i: (imp[i], i))
            step = EliminationRound(cols[drop], "noisy", float(imp[drop]), float(shares[drop]))

        if len(active) == 1:
            msg = f"elimination would remove the last feature {cols[0]!r}; stopping"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            trace.warnings.append(msg)
            break
        log.info("round %d: removing %s (%s)", len(trace.rounds) + 1, step.removed, step.reason)
        trace.rounds.append(step)
        del active[drop]
    trace.selected = [names[i] for i in active]
    return trace
