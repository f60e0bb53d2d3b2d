import numpy as np
import pytest

from pmt.dataset import Dataset
from pmt.schema import FeatureSchema, FeatureSpec


def small_schema() -> FeatureSchema:
    return FeatureSchema((
        FeatureSpec("numExecuted", level="dynamic"),
        FeatureSpec("numTestCover", level="dynamic"),
        FeatureSpec("mmsize", granularity="method"),
        FeatureSpec("MutatorClass", kind="categorical"),
    ))


def make_dataset(rows, schema=None) -> Dataset:
    """rows: (project, label, numExecuted, numTestCover, mmsize, MutatorClass)"""
    schema = schema or small_schema()
    projects = [r[0] for r in rows]
    labels = [r[1] for r in rows]
    names = schema.names
    columns = {name: [r[2 + j] for r in rows] for j, name in enumerate(names)}
    return Dataset(schema, projects, labels, columns)


@pytest.fixture
def schema():
    return small_schema()


@pytest.fixture
def toy():
    return make_dataset([
        ("p1", 1, 3, 1, 10.0, "A"),
        ("p1", 0, 0, 0, 4.5, "B"),
        ("p2", 1, 7, 2, 2.0, "A"),
        ("p2", 0, 0, 0, 8.0, "A"),
        ("p3", 0, 1, 1, 1.0, "C"),
        ("p3", 1, 0, 0, 3.0, "B"),
        ("p4", 1, 2, 2, 6.0, "A"),
        ("p4", 0, 0, 0, 9.0, "C"),
        ("p5", 0, 0, 0, 5.0, "B"),
        ("p5", 1, 4, 3, 7.0, "A"),
    ])


def separable_xy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = (X[:, 0] > 0).astype(np.int64)
    return X, y


def planted_config(seed: int, n_projects: int = 20, mutants=(400, 600)):
    """Strong-signal corpus with one exact duplicate (appended after its source) and one noise column."""
    from pmt.synthdata import SynthConfig

    schema = FeatureSchema((
        FeatureSpec("numExecuted", level="dynamic"),
        FeatureSpec("mmhalsteadDifficulty", granularity="method"),
        FeatureSpec("MutatorClass", kind="categorical"),
        FeatureSpec("ppavcc", granularity="package"),
        FeatureSpec("mmDifficultyCopy", granularity="method"),
        FeatureSpec("ccNoise", granularity="class"),
    ))
    return SynthConfig(
        n_projects=n_projects, mutants_per_project=mutants, uncovered_fraction=0.0,
        signal_features={"numExecuted": 1.5, "mmhalsteadDifficulty": -1.25, "MutatorClass": 1.25, "ppavcc": -1.0},
        noise_features=("ccNoise",), duplicate_of={"mmDifficultyCopy": "mmhalsteadDifficulty"},
        project_offset_sd=0.0, project_shift_sd=0.0, schema=schema, seed=seed,
    )


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
