"""Scott-Knott ranking with an effect-size gate (Scott-Knott ESD).

Groups are ordered by mean and split recursively at the boundary that
maximizes the between-group sum of squares of the means. A split stands only
if the Scott-Knott likelihood-ratio statistic exceeds the chi-square critical
value at ``alpha`` *and* Cohen's delta between the two sides is not negligible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .errors import DataError


@dataclass(frozen=True)
class MetricGroup:
    name: str
    observations: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim != 1 or not np.isfinite(obs).all():
            raise DataError(f"group {self.name!r}: observations must be a finite 1-D vector")
        object.__setattr__(self, "observations", obs)

    @property
    def mean(self) -> float:
        return float(self.observations.mean())


def cohens_delta(a, b) -> float:
    """Standardized mean difference with the pooled (n-1) standard deviation.

    A zero pooled deviation yields 0 for equal means and +/-inf otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise DataError("Cohen's delta needs at least two observations per side")
    diff = a.mean() - b.mean()
    pooled = ((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2)
    if pooled == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return float(diff / math.sqrt(pooled))


@dataclass
class RankResult:
    ranks: dict[str, int]
    partitions: list[list[str]]  # best partition first
    tree: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {"ranks": dict(self.ranks), "partitions": self.partitions, "tree": self.tree}


def _between_ss(means: np.ndarray, cut: int) -> float:
    t1, t2 = means[:cut].sum(), means[cut:].sum()
    k1, k2 = cut, len(means) - cut
    return t1 * t1 / k1 + t2 * t2 / k2 - (t1 + t2) ** 2 / (k1 + k2)


def scott_knott_esd(groups: Sequence[MetricGroup], alpha: float = 0.05, negligible_threshold: float = 0.2,
                    log_transform: bool = False) -> RankResult:
    """Rank groups (1 = highest mean); groups sharing a rank are indistinguishable."""
    if not groups:
        raise DataError("need at least one group")
    names = [g.name for g in groups]
    if len(set(names)) != len(names):
        raise DataError("group names must be unique")
    for g in groups:
        if len(g.observations) < 2:
            raise DataError(f"group {g.name!r} has fewer than two observations")
    if log_transform:
        if any((g.observations <= -1).any() for g in groups):
            raise DataError("log transform needs observations > -1")
        groups = [MetricGroup(g.name, np.log1p(g.observations)) for g in groups]

    ordered = sorted(groups, key=lambda g: (-g.mean, g.name))
    obs = [g.observations for g in ordered]
    # within-group error variance from all groups (one-way ANOVA)
    n_total = sum(len(o) for o in obs)
    dof = n_total - len(obs)
    sse = sum(((o - o.mean()) ** 2).sum() for o in obs)
    mse = sse / dof if dof > 0 else 0.0
    reps = n_total / len(obs)
    var_mean = mse / reps
    means = np.array([g.mean for g in ordered])

    def split(lo: int, hi: int) -> dict:
        node = {"groups": [ordered[i].name for i in range(lo, hi)]}
        k = hi - lo
        if k < 2:
            return node
        m = means[lo:hi]
        cuts = [c for c in range(1, k) if m[c - 1] != m[c]]
        if not cuts:
            return node
        b0s = [_between_ss(m, c) for c in cuts]
        best = int(np.argmax(b0s))
        cut, b0 = cuts[best], b0s[best]
        sigma2 = (((m - m.mean()) ** 2).sum() + dof * var_mean) / (k + dof)
        stat = math.inf if sigma2 == 0 else math.pi / (2 * (math.pi - 2)) * b0 / sigma2
        crit = float(chi2.ppf(1 - alpha, k / (math.pi - 2)))
        left = np.concatenate(obs[lo:lo + cut])
        right = np.concatenate(obs[lo + cut:hi])
        delta = cohens_delta(left, right)
        node.update(statistic=stat, critical=crit, delta=delta)
        if stat > crit and abs(delta) > negligible_threshold:
            node["split"] = [split(lo, lo + cut), split(lo + cut, hi)]
        return node

    tree = split(0, len(ordered))
    partitions: list[list[str]] = []

    def leaves(node):
        if "split" in node:
            for child in node["split"]:
                leaves(child)
        else:
            partitions.append(node["groups"])

    leaves(tree)
    ranks = {name: r for r, part in enumerate(partitions, start=1) for name in part}
    return RankResult(ranks, partitions, tree)
