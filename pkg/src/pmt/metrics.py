"""Imbalance-robust evaluation metrics and per-project reports."""
from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import Dataset, format_number
from .errors import DataError, UndefinedMetricError

REPORT_COLUMNS = ("project", "auc", "mcc", "bal_acc_adj", "n", "killed", "survived")


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined when only one class is present")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true) == 1
        p = np.asarray(y_pred) == 1
        return cls(int((t & p).sum()), int((~t & p).sum()), int((~t & ~p).sum()), int((t & ~p).sum()))

    def swapped(self) -> "ConfusionMatrix":
        """Same predictions with the positive class relabeled."""
        return ConfusionMatrix(self.tn, self.fn, self.tp, self.fp)


def mcc(cm: ConfusionMatrix) -> float:
    num = cm.tp * cm.tn - cm.fp * cm.fn
    den = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if den == 0:
        return 0.0
    return num / math.sqrt(den)


def balanced_accuracy_adjusted(cm: ConfusionMatrix) -> float:
    """Balanced accuracy rescaled so chance is 0 and perfect is 1."""
    if cm.tp + cm.fn == 0 or cm.tn + cm.fp == 0:
        raise UndefinedMetricError("balanced accuracy needs both classes present")
    tpr = cm.tp / (cm.tp + cm.fn)
    tnr = cm.tn / (cm.tn + cm.fp)
    return ((tpr + tnr) / 2.0 - 0.5) / 0.5


@dataclass(frozen=True)
class ProjectMetrics:
    project: str
    auc: float | None
    mcc: float
    bal_acc_adj: float | None
    n: int
    killed: int
    survived: int


def _summary(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "median": None}
    return {"count": len(values), "mean": statistics.fmean(values), "median": statistics.median(values)}


@dataclass
class EvalReport:
    rows: list[ProjectMetrics] = field(default_factory=list)

    def values(self, metric: str) -> list[float]:
        return [getattr(r, metric) for r in self.rows if getattr(r, metric) is not None]

    def aggregate(self) -> dict:
        aucs = self.values("auc")
        return {
            "projects": len(self.rows),
            "auc": _summary(aucs),
            "mcc": _summary(self.values("mcc")),
            "bal_acc_adj": _summary(self.values("bal_acc_adj")),
            "undefined_auc_projects": sum(r.auc is None for r in self.rows),
            "worse_than_random": sum(a < 0.5 for a in aucs),
        }

    def csv_rows(self) -> list[tuple]:
        rows = [REPORT_COLUMNS]
        rows += [(r.project, _fmt(r.auc), _fmt(r.mcc), _fmt(r.bal_acc_adj), r.n, r.killed, r.survived)
                 for r in self.rows]
        return rows

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.csv_rows())


def _fmt(v):
    return "" if v is None else format_number(v)


def read_report_csv(path) -> EvalReport:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(REPORT_COLUMNS):
            raise DataError(f"{path}: expected header {','.join(REPORT_COLUMNS)}")
        rows = []
        for line, rec in enumerate(reader, start=2):
            try:
                opt = lambda s: None if s.strip() == "" else float(s)  # noqa: E731
                rows.append(ProjectMetrics(rec["project"], opt(rec["auc"]), float(rec["mcc"]),
                                           opt(rec["bal_acc_adj"]), int(rec["n"]), int(rec["killed"]),
                                           int(rec["survived"])))
            except ValueError as exc:
                raise DataError(f"{path}: line {line}: {exc}") from None
    return EvalReport(rows)


def evaluate_scores(projects: Sequence[str], labels, scores, predictions=None) -> EvalReport:
    """Per-project metrics from precomputed scores (threshold 0.5, ties Killed)."""
    projects = np.asarray(projects, dtype=object)
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if len(projects) == 0:
        raise DataError("cannot evaluate an empty test set")
    if predictions is None:
        predictions = (scores >= 0.5).astype(np.int64)
    rows = []
    for project in sorted(set(projects)):
        m = projects == project
        y, s, p = labels[m], scores[m], predictions[m]
        cm = ConfusionMatrix.from_predictions(y, p)
        both = 0 < y.sum() < len(y)
        rows.append(ProjectMetrics(
            project=project,
            auc=roc_auc(s, y) if both else None,
            mcc=mcc(cm),
            bal_acc_adj=balanced_accuracy_adjusted(cm) if both else None,
            n=int(m.sum()),
            killed=int(y.sum()),
            survived=int(len(y) - y.sum()),
        ))
    return EvalReport(rows)


def evaluate_per_project(model, test: Dataset) -> EvalReport:
    if len(test) == 0:
        raise DataError("cannot evaluate an empty test set")
    if test.labels is None:
        raise DataError("evaluation needs labeled data")
    return evaluate_scores(test.projects, test.labels, model.score(test))
