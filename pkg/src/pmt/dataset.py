"""Mutant corpus: CSV ingestion, coverage filtering, project splits and
frequency encoding of categorical features."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError
from .schema import FeatureSchema

KILLED = 1
SURVIVED = 0
LABEL_NAMES = {KILLED: "Killed", SURVIVED: "Survived"}
_LABEL_TOKENS = {"killed": KILLED, "survived": SURVIVED}


def parse_label(token: str) -> int:
    try:
        return _LABEL_TOKENS[token.strip().lower()]
    except KeyError:
        raise DataError(f"unknown label token {token!r}") from None


def format_number(x: float) -> str:
    """Shortest text that parses back to exactly ``x``."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15 and not (x == 0 and math.copysign(1.0, x) < 0):
        return str(int(x))
    return repr(x)


@dataclass(frozen=True)
class MutantRecord:
    project: str
    label: int | None
    values: Mapping[str, float | str]


class Dataset:
    """Column-oriented, immutable collection of mutant records.

    Numeric columns are float64 arrays, categorical ones object arrays of str.
    ``labels`` holds 1 for Killed and 0 for Survived, or is ``None`` for
    unlabeled data.
    """

    def __init__(self, schema: FeatureSchema, projects, labels, columns: Mapping[str, Sequence]):
        self.schema = schema
        projects = np.asarray(projects, dtype=object)
        n = len(projects)
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int8)
            if labels.shape != (n,):
                raise DataError("labels and projects differ in length")
            bad = ~np.isin(labels, (KILLED, SURVIVED))
            if bad.any():
                raise DataError(f"row {int(np.argmax(bad))}: label must be 0/1")
        missing = [name for name in schema.names if name not in columns]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        cols = {}
        for spec in schema:
            raw = columns[spec.name]
            if spec.is_categorical:
                arr = np.array([str(v) for v in raw], dtype=object)
            else:
                arr = np.asarray(raw, dtype=np.float64)
                if arr.ndim == 1 and n and not np.isfinite(arr).all():
                    row = int(np.argmax(~np.isfinite(arr)))
                    raise DataError(f"row {row}, column {spec.name}: non-finite value")
            if arr.shape != (n,):
                raise DataError(f"column {spec.name} has {len(arr)} values, expected {n}")
            arr.flags.writeable = False
            cols[spec.name] = arr
        for i, p in enumerate(projects):
            if not isinstance(p, str) or not p:
                raise DataError(f"row {i}: empty project identifier")
        projects.flags.writeable = False
        if labels is not None:
            labels.flags.writeable = False
        self.projects = projects
        self.labels = labels
        self.columns = cols
        _check_coverage(self)

    def __len__(self):
        return len(self.projects)

    def __repr__(self):
        return f"Dataset(n={len(self)}, projects={len(self.project_ids)}, features={len(self.schema)})"

    def __eq__(self, other):
        if not isinstance(other, Dataset) or self.schema != other.schema:
            return NotImplemented
        if len(self) != len(other):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        return bool(np.array_equal(self.projects, other.projects)) and all(
            np.array_equal(self.columns[n], other.columns[n]) for n in self.schema.names
        )

    @property
    def project_ids(self) -> list[str]:
        return sorted(set(self.projects))

    @property
    def records(self) -> list[MutantRecord]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[MutantRecord]:
        names = self.schema.names
        for i in range(len(self)):
            values = {}
            for name in names:
                v = self.columns[name][i]
                values[name] = v if isinstance(v, str) else float(v)
            label = None if self.labels is None else int(self.labels[i])
            yield MutantRecord(self.projects[i], label, values)

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.schema,
            self.projects[index],
            None if self.labels is None else self.labels[index],
            {name: col[index] for name, col in self.columns.items()},
        )

    def with_schema(self, schema: FeatureSchema) -> "Dataset":
        return Dataset(schema, self.projects, self.labels, self.columns)

    @classmethod
    def from_records(cls, schema: FeatureSchema, records: Sequence[MutantRecord]) -> "Dataset":
        columns = {name: [] for name in schema.names}
        for i, rec in enumerate(records):
            extra = set(rec.values) - set(columns)
            if extra or len(rec.values) != len(columns):
                raise DataError(f"record {i}: values do not match schema features")
            for name in schema.names:
                columns[name].append(rec.values[name])
        labels = [r.label for r in records]
        if any(lab is None for lab in labels):
            if not all(lab is None for lab in labels):
                raise DataError("mixed labeled and unlabeled records")
            labels = None
        return cls(schema, [r.project for r in records], labels, columns)

    def label_counts(self) -> tuple[int, int]:
        """(killed, survived)"""
        if self.labels is None:
            raise DataError("dataset is unlabeled")
        killed = int(self.labels.sum())
        return killed, len(self) - killed


def _check_coverage(ds: Dataset) -> None:
    cols = ds.columns
    for name in ("numExecuted", "numTestCover"):
        if name in cols and (cols[name] < 0).any():
            row = int(np.argmax(cols[name] < 0))
            raise DataError(f"row {row}, column {name}: negative count")
    if "numExecuted" in cols and "numTestCover" in cols:
        bad = (cols["numExecuted"] > 0) != (cols["numTestCover"] > 0)
        if bad.any():
            row = int(np.argmax(bad))
            raise DataError(
                f"row {row}, columns numExecuted/numTestCover: inconsistent coverage "
                f"({cols['numExecuted'][row]:g} executions, {cols['numTestCover'][row]:g} covering tests)"
            )


def _parse_number(text: str, line: int, column: str) -> float:
    s = text.strip()
    try:
        value = float(s)
    except ValueError:
        raise DataError(f"line {line}, column {column}: cannot parse number {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"line {line}, column {column}: non-finite value {text!r}")
    return value


def load_csv(path, schema: FeatureSchema, *, require_label: bool = True) -> Dataset:
    """Read a ``project,label,<features...>`` CSV file.

    Extra columns are ignored. With ``require_label=False`` the label column
    may be absent, in which case the dataset is unlabeled.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        required = ["project"] + (["label"] if require_label else []) + schema.names
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")
        pos = {name: header.index(name) for name in header}
        has_label = "label" in pos
        projects, labels = [], []
        columns = {name: [] for name in schema.names}
        specs = list(schema)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            project = row[pos["project"]].strip()
            if not project:
                raise DataError(f"{path}: line {line}, column project: empty project identifier")
            projects.append(project)
            if has_label:
                try:
                    labels.append(parse_label(row[pos["label"]]))
                except DataError as exc:
                    raise DataError(f"{path}: line {line}, column label: {exc}") from None
            for spec in specs:
                cell = row[pos[spec.name]]
                if spec.is_categorical:
                    token = cell.strip()
                    if not token:
                        raise DataError(f"{path}: line {line}, column {spec.name}: empty category")
                    columns[spec.name].append(token)
                else:
                    columns[spec.name].append(_parse_number(cell, line, spec.name))
    try:
        return Dataset(schema, projects, labels if has_label else None, columns)
    except DataError as exc:
        # row indices in the message are 0-based data rows; report file lines
        raise DataError(f"{path}: {_rows_to_lines(str(exc))}") from None


def _rows_to_lines(msg: str) -> str:
    if msg.startswith("row "):
        head, _, rest = msg.partition(",")
        try:
            return f"line {int(head[4:]) + 2},{rest}"
        except ValueError:
            pass
    return msg


def write_csv(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        write_csv_to(ds, fh)


def write_csv_to(ds: Dataset, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    names = ds.schema.names
    header = ["project"] + (["label"] if ds.labels is not None else []) + names
    writer.writerow(header)
    cols = [ds.columns[n] for n in names]
    cat = [ds.schema.spec(n).is_categorical for n in names]
    for i in range(len(ds)):
        row = [ds.projects[i]]
        if ds.labels is not None:
            row.append(LABEL_NAMES[int(ds.labels[i])])
        row.extend(c[i] if is_cat else format_number(c[i]) for c, is_cat in zip(cols, cat))
        writer.writerow(row)


def covered_mask(ds: Dataset) -> np.ndarray:
    if "numTestCover" not in ds.columns:
        raise SchemaError("coverage filtering needs a numTestCover column")
    return ds.columns["numTestCover"] >= 1


def filter_covered(ds: Dataset) -> Dataset:
    """Keep only mutants executed by at least one test, in original order."""
    return ds.take(np.flatnonzero(covered_mask(ds)))


def _partition_counts(n_projects: int, fractions: Sequence[float]) -> list[int]:
    # non-train partitions round up, train takes the remainder: 654 -> 522/66/66
    rest = [math.ceil(f * n_projects - 1e-9) for f in fractions[1:]]
    counts = [n_projects - sum(rest)] + rest
    if min(counts) < 1:
        raise DataError(f"cannot split {n_projects} projects into fractions {tuple(fractions)}")
    return counts


def split_by_project(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, ...]:
    """Assign whole projects to train/validation/test partitions at random."""
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions):
        raise DataError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-6:
        raise DataError(f"split fractions sum to {sum(fractions)}, expected 1")
    projects = ds.project_ids
    if len(projects) < len(fractions):
        raise DataError(f"{len(projects)} projects cannot fill {len(fractions)} partitions")
    counts = _partition_counts(len(projects), fractions)
    order = np.random.default_rng(seed).permutation(len(projects))
    parts, start = [], 0
    for c in counts:
        chosen = {projects[j] for j in order[start:start + c]}
        start += c
        mask = np.fromiter((p in chosen for p in ds.projects), dtype=bool, count=len(ds))
        parts.append(ds.take(np.flatnonzero(mask)))
    return tuple(parts)


@dataclass(frozen=True)
class EncoderState:
    """Per categorical feature: category token -> occurrence count in the fitting set."""

    counts: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {name: dict(sorted(table.items())) for name, table in self.counts.items()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EncoderState":
        return cls({name: {str(k): int(v) for k, v in table.items()} for name, table in data.items()})


def fit_frequency_encoding(train: Dataset) -> EncoderState:
    if len(train) == 0:
        raise DataError("cannot fit an encoder on an empty dataset")
    counts = {}
    for name in train.schema.categorical:
        tokens, n = np.unique(train.columns[name].astype(str), return_counts=True)
        counts[name] = {str(t): int(c) for t, c in zip(tokens, n)}
    return EncoderState(counts)


def apply_encoding(ds: Dataset, enc: EncoderState, features: Sequence[str] | None = None) -> np.ndarray:
    """Numeric design matrix with categorical tokens replaced by fitted counts.

    Columns follow ``features`` (default: schema order). Unseen tokens map to 0.
    """
    names = ds.schema.names if features is None else list(features)
    X = np.empty((len(ds), len(names)), dtype=np.float64)
    for j, name in enumerate(names):
        if name not in ds.columns:
            raise SchemaError(f"feature {name!r} not in dataset")
        col = ds.columns[name]
        if ds.schema.spec(name).is_categorical != (name in enc.counts):
            raise SchemaError(f"feature {name!r}: encoder and schema disagree on whether it is categorical")
        if name in enc.counts:
            table = enc.counts[name]
            X[:, j] = [table.get(tok, 0) for tok in col]
        else:
            X[:, j] = col
    return X
