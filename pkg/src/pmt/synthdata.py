"""Synthetic mutant corpora.

Uncovered mutants get zero dynamic features and always survive; covered
mutants are killed with probability ``sigmoid(sum_j w_j z_j + offset_p + b)``
where ``z_j`` is a standardized transform of signal feature j, ``offset_p`` a
per-project random offset and ``b`` is solved so the expected kill rate among
covered mutants equals ``covered_kill_rate``.
"""
from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .dataset import Dataset, filter_covered, split_by_project
from .errors import DataError
from .schema import COVERAGE_FEATURES, FeatureSchema, default_schema

MUTATORS = (
    "NegateConditionalsMutator", "VoidMethodCallMutator", "ReturnValsMutator", "MathMutator",
    "ConditionalsBoundaryMutator", "IncrementsMutator", "NullReturnValsMutator",
    "EmptyObjectReturnValsMutator", "PrimitiveReturnsMutator", "BooleanTrueReturnValsMutator",
    "BooleanFalseReturnValsMutator", "InvertNegsMutator",
)
RETURN_TYPES = ("void", "boolean", "int", "String", "Object", "long", "List", "double", "char", "Map")
UNIT_INTERVAL = ("ppabstractness", "ppinstability", "ppdistance")
# (log-scale location, log-scale spread, integer-valued)
_LOGNORMAL = {
    "ppavcc": (0.7, 0.4, False),
    "cchalsteadCumulativeBugs": (-0.5, 1.0, False),
    "ppmaintainabilityIndexNC": (4.4, 0.2, False),
    "ppmaintainabilityIndex": (4.6, 0.2, False),
    "ccmaintainabilityIndex": (4.5, 0.25, False),
    "ccmaintainabilityIndexNC": (4.3, 0.25, False),
    "mmhalsteadDifficulty": (2.0, 0.8, False),
}
_DEFAULT_LOGNORMAL = (2.0, 1.0, True)

DEFAULT_SIGNAL = {
    "numExecuted": 0.35,
    "mmhalsteadDifficulty": -0.25,
    "MutatorClass": 0.25,
    "numAssertInTC": 0.2,
    "ppavcc": -0.15,
    "cchalsteadCumulativeBugs": -0.15,
}


@dataclass(frozen=True)
class SynthConfig:
    n_projects: int = 50
    mutants_per_project: tuple[int, int] = (200, 2000)
    uncovered_fraction: float = 0.625
    covered_kill_rate: float = 0.67
    signal_features: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SIGNAL))
    noise_features: tuple[str, ...] = ()
    duplicate_of: Mapping[str, str] = field(default_factory=dict)
    project_offset_sd: float = 0.5
    project_shift_sd: float = 0.3
    schema: FeatureSchema | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mutants_per_project", tuple(self.mutants_per_project))
        object.__setattr__(self, "noise_features", tuple(self.noise_features))
        lo, hi = self.mutants_per_project
        if self.n_projects < 1 or lo < 1 or hi < lo:
            raise DataError("need n_projects >= 1 and 1 <= min mutants <= max mutants")
        if not 0.0 <= self.uncovered_fraction <= 1.0:
            raise DataError("uncovered_fraction must lie in [0, 1]")
        if not 0.0 < self.covered_kill_rate < 1.0:
            raise DataError("covered_kill_rate must lie in (0, 1)")
        schema = self.feature_schema
        overlap = set(self.signal_features) & set(self.noise_features)
        if overlap:
            raise DataError(f"features both signal and noise: {sorted(overlap)}")
        for name in [*self.signal_features, *self.noise_features, *self.duplicate_of, *self.duplicate_of.values()]:
            if name not in schema:
                raise DataError(f"feature {name!r} not in schema")
        for dup, src in self.duplicate_of.items():
            if schema.spec(dup).is_categorical or schema.spec(src).is_categorical:
                raise DataError("duplicates must be numeric")
            if dup in self.signal_features or dup in COVERAGE_FEATURES or src in self.duplicate_of:
                raise DataError(f"invalid duplicate {dup!r} -> {src!r}")
        if self.uncovered_fraction > 0 and "numTestCover" not in schema:
            raise DataError("uncovered mutants need a numTestCover feature")

    @property
    def feature_schema(self) -> FeatureSchema:
        return self.schema if self.schema is not None else default_schema()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["signal_features"] = dict(self.signal_features)
        d["duplicate_of"] = dict(self.duplicate_of)
        d["mutants_per_project"] = list(self.mutants_per_project)
        d["noise_features"] = list(self.noise_features)
        d["schema"] = self.feature_schema.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if d.get("schema") is not None:
            d["schema"] = FeatureSchema.from_dict(d["schema"])
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def weak_signal_config(**kw) -> SynthConfig:
    base = dict(signal_features={k: v * 0.6 for k, v in DEFAULT_SIGNAL.items()})
    base.update(kw)
    return SynthConfig(**base)


def zero_signal_config(**kw) -> SynthConfig:
    base = dict(signal_features={})
    base.update(kw)
    return SynthConfig(**base)


def strong_signal_config(**kw) -> SynthConfig:
    base = dict(signal_features={k: v * 5 for k, v in DEFAULT_SIGNAL.items()})
    base.update(kw)
    return SynthConfig(**base)


def _token_probs(tokens: Sequence[str]) -> np.ndarray:
    w = 1.0 / np.arange(1, len(tokens) + 1)
    return w / w.sum()


def _tokens_for(name: str) -> tuple[str, ...]:
    if name == "MutatorClass":
        return MUTATORS
    if name == "returnType":
        return RETURN_TYPES
    return tuple(f"{name}_{i}" for i in range(8))


def _draw_static(name, kind_cat, n, rng, shift, shift_sd):
    if kind_cat:
        tokens = _tokens_for(name)
        logits = np.log(_token_probs(tokens)) + rng.normal(0.0, shift_sd, len(tokens))
        p = np.exp(logits - logits.max())
        return np.array(tokens, dtype=object)[rng.choice(len(tokens), size=n, p=p / p.sum())]
    if name in UNIT_INTERVAL:
        lo = np.clip(0.25 + shift, 0.0, 0.5)
        return lo + 0.5 * rng.random(n)
    mu, sd, integer = _LOGNORMAL.get(name, _DEFAULT_LOGNORMAL)
    x = rng.lognormal(mu + shift, sd, n)
    return np.floor(x) if integer else x


def _draw_dynamic(n_cov, rng):
    cover = 1 + np.floor(rng.lognormal(0.5, 1.0, n_cov))
    executed = cover + np.floor(rng.lognormal(1.5, 1.5, n_cov))
    in_tm = np.floor(rng.lognormal(0.5, 1.0, n_cov))
    in_tc = in_tm + np.floor(rng.lognormal(1.0, 1.0, n_cov))
    return {"numTestCover": cover, "numExecuted": executed, "numAssertInTM": in_tm, "numAssertInTC": in_tc}


def _signal_transform(name, col, schema, token_effects):
    if schema.spec(name).is_categorical:
        return np.array([token_effects[name].get(t, 0.0) for t in col])
    if name in UNIT_INTERVAL:
        return col.astype(np.float64)
    return np.log1p(np.maximum(col.astype(np.float64), 0.0))


def generate(cfg: SynthConfig) -> Dataset:
    schema = cfg.feature_schema
    lo, hi = cfg.mutants_per_project
    root = np.random.default_rng([cfg.seed, 0])
    token_effects = {}
    for name in cfg.signal_features:
        if schema.spec(name).is_categorical:
            tokens = _tokens_for(name)
            token_effects[name] = dict(zip(tokens, root.normal(0.0, 1.0, len(tokens))))

    projects, covered, offsets, columns = [], [], [], {n: [] for n in schema.names}
    for p in range(cfg.n_projects):
        rng = np.random.default_rng([cfg.seed, 1, p])
        n = int(rng.integers(lo, hi + 1))
        cov = rng.random(n) >= cfg.uncovered_fraction
        offsets.append(np.full(n, rng.normal(0.0, cfg.project_offset_sd) if cfg.project_offset_sd > 0 else 0.0))
        projects.extend([f"proj{p:04d}"] * n)
        covered.append(cov)
        dyn = _draw_dynamic(int(cov.sum()), rng)
        for spec in schema:
            if spec.name in cfg.duplicate_of:
                continue
            if spec.name in COVERAGE_FEATURES:
                col = np.zeros(n)
                col[cov] = dyn[spec.name]
            else:
                shift = rng.normal(0.0, cfg.project_shift_sd) if cfg.project_shift_sd > 0 else 0.0
                col = _draw_static(spec.name, spec.is_categorical, n, rng, shift, cfg.project_shift_sd)
            columns[spec.name].append(col)
    columns = {k: np.concatenate(v) for k, v in columns.items() if v}
    for dup, src in cfg.duplicate_of.items():
        columns[dup] = 2.0 * columns[src] + 1.0
    covered = np.concatenate(covered)
    offsets = np.concatenate(offsets)

    logit = offsets.copy()
    for name, w in cfg.signal_features.items():
        z = _signal_transform(name, columns[name], schema, token_effects)
        ref = z[covered] if covered.any() else z
        sd = ref.std()
        logit += w * ((z - ref.mean()) / sd if sd > 0 else 0.0)
    labels = np.zeros(len(covered), dtype=np.int8)
    if covered.any():
        lc = logit[covered]
        gap = lambda b: expit(lc + b).mean() - cfg.covered_kill_rate  # noqa: E731
        try:
            b = brentq(gap, -60.0, 60.0, xtol=1e-12)
        except ValueError:
            raise DataError("signal weights make the requested kill rate unreachable") from None
        if abs(gap(b)) > 1e-6:
            raise DataError("signal weights make the requested kill rate unreachable")
        u = np.random.default_rng([cfg.seed, 2]).random(len(covered))
        labels[covered] = (u[covered] < expit(lc + b)).astype(np.int8)
    return Dataset(schema, projects, labels, columns)


def _mean_auc(report) -> float:
    vals = report.values("auc")
    return statistics.fmean(vals) if vals else float("nan")


def inflation_experiment(cfg: SynthConfig, options=None, seeds: Sequence[int] = (0,),
                         fractions=(0.8, 0.1, 0.1), threads: int = 1) -> list[dict]:
    """Train on unfiltered data; evaluate on all test mutants and on covered ones only.

    The default model is a plain random forest (no ADASYN, no elimination),
    the setting of earlier cross-project work.
    """
    from .ensemble import PipelineOptions, fit_pipeline
    from .metrics import evaluate_per_project

    if options is None:
        options = PipelineOptions(use_adasyn=False, use_gb_bag=False, eliminate=False)
    out = []
    for seed in seeds:
        ds = generate(replace(cfg, seed=seed))
        train, valid, test = split_by_project(ds, fractions, seed)
        model = fit_pipeline(train, valid, options.with_seed(seed), threads)
        rep_all = evaluate_per_project(model, test)
        rep_cov = evaluate_per_project(model, filter_covered(test))
        out.append({
            "seed": seed,
            "auc_all": _mean_auc(rep_all),
            "auc_covered_only": _mean_auc(rep_cov),
            "auc_all_median": rep_all.aggregate()["auc"]["median"],
            "auc_covered_only_median": rep_cov.aggregate()["auc"]["median"],
        })
    return out
