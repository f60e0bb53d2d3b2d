"""Feature schema for mutant records.

A schema is an ordered list of features, each tagged numeric/categorical,
dynamic/static and with a granularity (mutant, method, class, package).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
DYNAMIC = "dynamic"
STATIC = "static"
GRANULARITIES = ("mutant", "method", "class", "package")

SCHEMA_VERSION = 1

# dynamic features that are zero for a mutant no test executes
COVERAGE_FEATURES = ("numExecuted", "numTestCover", "numAssertInTM", "numAssertInTC")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = NUMERIC
    level: str = STATIC
    granularity: str = "mutant"

    def __post_init__(self):
        if not self.name or not self.name.isidentifier():
            raise SchemaError(f"invalid feature name {self.name!r}")
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"feature {self.name}: unknown kind {self.kind!r}")
        if self.level not in (DYNAMIC, STATIC):
            raise SchemaError(f"feature {self.name}: unknown level {self.level!r}")
        if self.granularity not in GRANULARITIES:
            raise SchemaError(f"feature {self.name}: unknown granularity {self.granularity!r}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate feature names: {', '.join(dupes)}")
        for reserved in ("project", "label"):
            if reserved in names:
                raise SchemaError(f"feature name {reserved!r} is reserved")

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __contains__(self, name):
        return any(f.name == name for f in self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def categorical(self) -> list[str]:
        return [f.name for f in self.features if f.is_categorical]

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"feature {name!r} not in schema")

    def spec(self, name: str) -> FeatureSpec:
        return self.features[self.index(name)]

    def subset(self, names) -> "FeatureSchema":
        """Schema restricted to ``names``, in the order given."""
        return FeatureSchema(tuple(self.spec(n) for n in names))

    def to_dict(self) -> dict:
        return {"version": SCHEMA_VERSION, "features": [asdict(f) for f in self.features]}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSchema":
        if not isinstance(data, dict) or "features" not in data:
            raise SchemaError("schema document must be an object with a 'features' list")
        version = data.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {version}")
        try:
            return cls(tuple(FeatureSpec(**f) for f in data["features"]))
        except TypeError as exc:
            raise SchemaError(f"malformed feature entry: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_schema(path) -> FeatureSchema:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return FeatureSchema.from_dict(data)


def _granularity(name: str) -> str:
    if name.startswith("pp"):
        return "package"
    if name.startswith("cc"):
        return "class"
    if name.startswith("mm"):
        return "method"
    return "mutant"


# the 29 standard mutant features in a fixed order, followed by numAssertInTM
_DEFAULT_NAMES = (
    "numExecuted",
    "MutatorClass",
    "numAssertInTC",
    "numTestCover",
    "ppavcc",
    "cchalsteadCumulativeBugs",
    "ppRVF",
    "ppnumberOfMethods",
    "ppnumberOfClasses",
    "ppmaintainabilityIndexNC",
    "ppfanout",
    "ccmaintainabilityIndex",
    "mmhalsteadDifficulty",
    "ppabstractness",
    "ppmaintainabilityIndex",
    "ccexternalMethodCalls",
    "mminstanceVariablesReferenced",
    "ccimportedPackages",
    "ppdistance",
    "returnType",
    "ccfanIn",
    "ppfanin",
    "pploc",
    "ccmaintainabilityIndexNC",
    "mmexternalMethodsCalled",
    "ppinstability",
    "ppmaxcc",
    "mmvariablesReferenced",
    "ccunweightedClassSize",
    "numAssertInTM",
)


def default_schema() -> FeatureSchema:
    specs = []
    for name in _DEFAULT_NAMES:
        if name in COVERAGE_FEATURES:
            specs.append(FeatureSpec(name, NUMERIC, DYNAMIC, "mutant"))
        elif name == "MutatorClass":
            specs.append(FeatureSpec(name, CATEGORICAL, STATIC, "mutant"))
        elif name == "returnType":
            specs.append(FeatureSpec(name, CATEGORICAL, STATIC, "method"))
        else:
            specs.append(FeatureSpec(name, NUMERIC, STATIC, _granularity(name)))
    return FeatureSchema(tuple(specs))
