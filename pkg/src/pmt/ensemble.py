"""Random forest, bagged gradient boosting and the averaged combined model."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import KILLED, SURVIVED, Dataset, EncoderState, apply_encoding, fit_frequency_encoding
from .errors import FitError, ModelFormatError, SchemaError
from .resample import AdasynConfig, adasyn
from .schema import FeatureSchema
from .trees import (DecisionTree, GbConfig, GradientBoostedModel, TreeConfig, fit_gb, fit_tree,
                    pack_trees, predict_packed)

log = logging.getLogger(__name__)

MODEL_FORMAT = "pmt-model"
MODEL_VERSION = 1
KILL_THRESHOLD = 0.5
_MAX_REDRAWS = 10


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _order_free_mean(member_probs: np.ndarray) -> np.ndarray:
    """Mean over axis 0 that does not depend on member order (sorted summation)."""
    return np.sort(member_probs, axis=0).sum(axis=0) / member_probs.shape[0]


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features_fraction: float = 0.7
    bootstrap: bool = True
    min_samples_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def tree(self) -> TreeConfig:
        return TreeConfig(self.max_features_fraction, self.min_samples_leaf, self.max_depth)


@dataclass(frozen=True)
class GbBagConfig:
    n_models: int = 50
    subsample: bool = True
    inner: GbConfig = GbConfig()
    seed: int = 0

    def __post_init__(self):
        if self.n_models < 1:
            raise ValueError("n_models must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


class Forest:
    def __init__(self, trees: Sequence[DecisionTree]):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        self.trees = list(trees)
        self.n_features = self.trees[0].n_features
        self._packed = pack_trees(self.trees)

    def __len__(self):
        return len(self.trees)

    def member_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"row width {X.shape[1]} does not match forest width {self.n_features}")
        return predict_packed(self._packed, X)

    def predict_proba(self, X) -> np.ndarray:
        return _order_free_mean(self.member_proba(X))

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "Forest":
        return cls([DecisionTree.from_dict(t) for t in d["trees"]])


class GbBag:
    def __init__(self, models: Sequence[GradientBoostedModel]):
        if not models:
            raise ValueError("a boosting bag needs at least one model")
        self.models = list(models)
        self.n_features = self.models[0].n_features

    def __len__(self):
        return len(self.models)

    def member_proba(self, X) -> np.ndarray:
        return np.stack([m.predict_proba(X) for m in self.models])

    def predict_proba(self, X) -> np.ndarray:
        return _order_free_mean(self.member_proba(X))

    def to_dict(self) -> dict:
        return {"models": [m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, d) -> "GbBag":
        return cls([GradientBoostedModel.from_dict(m) for m in d["models"]])


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    if len(X) == 0:
        raise FitError("cannot fit on empty input")
    if len(np.unique(y)) < 2:
        raise FitError("training labels contain a single class")
    return X, y


def fit_forest(X, y, cfg: ForestConfig = ForestConfig(), threads: int = 1) -> Forest:
    """N Gini trees, each on its own bootstrap sample; tree i uses seed ``cfg.seed ^ i``."""
    X, y = _check_xy(X, y)
    n = len(X)
    tcfg = cfg.tree

    def one(i):
        seed = cfg.seed ^ i
        sample = np.random.default_rng(seed).integers(0, n, size=n) if cfg.bootstrap else None
        return fit_tree(X, y, tcfg, seed=seed, sample_index=sample)

    return Forest(_map(one, range(cfg.n_trees), threads))


def predict_forest(forest: Forest, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = forest.predict_proba(x)
    return float(out[0]) if x.ndim == 1 else out


def fit_gb_bag(X, y, cfg: GbBagConfig = GbBagConfig(), threads: int = 1) -> GbBag:
    """B boosters, each on an independent bootstrap resample (seed ``cfg.seed ^ i``)."""
    X, y = _check_xy(X, y)
    n = len(X)

    def one(i):
        if not cfg.subsample:
            return fit_gb(X, y, cfg.inner)
        rng = np.random.default_rng(cfg.seed ^ i)
        for _ in range(_MAX_REDRAWS):
            sample = rng.integers(0, n, size=n)
            ys = y[sample]
            if ys.min() != ys.max():
                return fit_gb(X[sample], ys, cfg.inner)
        raise FitError(f"booster {i}: {_MAX_REDRAWS} bootstrap draws all had a single class")

    return GbBag(_map(one, range(cfg.n_models), threads))


@dataclass(frozen=True)
class PipelineOptions:
    use_adasyn: bool = True
    use_forest: bool = True
    use_gb_bag: bool = True
    eliminate: bool = True
    adasyn: AdasynConfig = AdasynConfig()
    forest: ForestConfig = ForestConfig()
    gb_bag: GbBagConfig = GbBagConfig()
    importance_threshold: float = 0.01
    rho_threshold: float = 0.9
    importance_repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (self.use_forest or self.use_gb_bag):
            raise ValueError("at least one of the forest and the boosting bag must be enabled")

    def with_seed(self, seed: int) -> "PipelineOptions":
        return replace(self, seed=seed, adasyn=replace(self.adasyn, seed=seed),
                       forest=replace(self.forest, seed=seed), gb_bag=replace(self.gb_bag, seed=seed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineOptions":
        d = dict(d)
        d["adasyn"] = AdasynConfig(**d["adasyn"])
        d["forest"] = ForestConfig(**d["forest"])
        gb = dict(d["gb_bag"])
        gb["inner"] = GbConfig(**gb["inner"])
        d["gb_bag"] = GbBagConfig(**gb)
        return cls(**d)


@dataclass
class CombinedModel:
    """Average of the forest probability and the boosting-bag probability.

    ``predict_proba`` takes a matrix whose columns are ``selected_features``
    (already encoded); ``score`` takes a Dataset.
    """

    forest: Forest | None
    gb_bag: GbBag | None
    encoder: EncoderState
    selected_features: list[str]
    schema: FeatureSchema
    threshold: float = KILL_THRESHOLD
    options: PipelineOptions | None = None
    elimination: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.forest is None and self.gb_bag is None:
            raise ValueError("combined model needs at least one sub-ensemble")
        width = len(self.selected_features)
        for part in (self.forest, self.gb_bag):
            if part is not None and part.n_features != width:
                raise ValueError("sub-ensemble width differs from the selected feature list")
        if self.threshold != KILL_THRESHOLD:
            raise ValueError("the kill threshold is fixed at 0.5")

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.selected_features):
            raise SchemaError(f"expected {len(self.selected_features)} columns, got {X.shape[1]}")
        parts = [p.predict_proba(X) for p in (self.forest, self.gb_bag) if p is not None]
        if len(parts) == 1:
            return parts[0]
        return (parts[0] + parts[1]) / 2.0

    def design_matrix(self, ds: Dataset) -> np.ndarray:
        missing = [f for f in self.selected_features if f not in ds.columns]
        if missing:
            raise SchemaError(f"dataset lacks model features: {', '.join(missing)}")
        return apply_encoding(ds, self.encoder, self.selected_features)

    def score(self, ds: Dataset) -> np.ndarray:
        return self.predict_proba(self.design_matrix(ds))

    def classify(self, X) -> np.ndarray:
        return classify_scores(self.predict_proba(X))

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema": self.schema.to_dict(),
            "selected_features": list(self.selected_features),
            "encoder": self.encoder.to_dict(),
            "threshold": self.threshold,
            "options": None if self.options is None else self.options.to_dict(),
            "elimination": self.elimination,
            "forest": None if self.forest is None else self.forest.to_dict(),
            "gb_bag": None if self.gb_bag is None else self.gb_bag.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CombinedModel":
        if d.get("format") != MODEL_FORMAT:
            raise ModelFormatError("not a model file")
        if d.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {d.get('version')}")
        try:
            return cls(
                forest=None if d["forest"] is None else Forest.from_dict(d["forest"]),
                gb_bag=None if d["gb_bag"] is None else GbBag.from_dict(d["gb_bag"]),
                encoder=EncoderState.from_dict(d["encoder"]),
                selected_features=list(d["selected_features"]),
                schema=FeatureSchema.from_dict(d["schema"]),
                threshold=float(d["threshold"]),
                options=None if d["options"] is None else PipelineOptions.from_dict(d["options"]),
                elimination=d.get("elimination"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model file: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def load_model(path) -> CombinedModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from None
    return CombinedModel.from_dict(data)


def predict_combined(model: CombinedModel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = model.predict_proba(x)
    return float(out[0]) if x.ndim == 1 else out


def classify_scores(scores) -> np.ndarray:
    """1 (Killed) when score >= 0.5, else 0 (Survived); 0.5 itself counts as Killed."""
    return np.where(np.asarray(scores) >= KILL_THRESHOLD, KILLED, SURVIVED)


def classify(model: CombinedModel, x) -> np.ndarray | int:
    x = np.asarray(x, dtype=np.float64)
    out = classify_scores(model.predict_proba(x))
    return int(out[0]) if x.ndim == 1 else out


def fit_members(X, y, options: PipelineOptions, threads: int = 1) -> tuple[Forest | None, GbBag | None]:
    forest = fit_forest(X, y, options.forest, threads) if options.use_forest else None
    bag = fit_gb_bag(X, y, options.gb_bag, threads) if options.use_gb_bag else None
    return forest, bag


def fit_pipeline(train: Dataset, valid: Dataset | None = None, options: PipelineOptions = PipelineOptions(),
                 threads: int = 1) -> CombinedModel:
    """Encode, rebalance with ADASYN, eliminate features, fit the final model."""
    from .featsel import recursive_elimination

    if len(train) == 0:
        raise FitError("empty training set")
    if train.labels is None:
        raise FitError("training data must be labeled")
    encoder = fit_frequency_encoding(train)
    names = train.schema.names
    X = apply_encoding(train, encoder)
    y = train.labels.astype(np.int64)
    X_fit, y_fit = (adasyn(X, y, options.adasyn) if options.use_adasyn else (X, y))
    log.info("training on %d rows (%d synthetic)", len(X_fit), len(X_fit) - len(X))

    def build(cols: list[str], forest, bag) -> CombinedModel:
        return CombinedModel(forest, bag, encoder, cols, train.schema, options=options)

    if options.eliminate:
        if valid is None or len(valid) == 0 or valid.labels is None:
            raise FitError("feature elimination needs a labeled validation set")
        X_valid = apply_encoding(valid, encoder)

        def fit_cols(Xs, ys, cols):
            return build(cols, *fit_members(Xs, ys, options, threads))

        trace = recursive_elimination(
            X_fit, y_fit, X_valid, valid.labels.astype(np.int64), names, fit_cols,
            X_corr=X, importance_threshold=options.importance_threshold,
            rho_threshold=options.rho_threshold, repeats=options.importance_repeats,
            seed=options.seed, threads=threads)
        model = trace.model
        model.elimination = trace.to_dict()
        return model

    return build(list(names), *fit_members(X_fit, y_fit, options, threads))
