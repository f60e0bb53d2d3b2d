import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from conftest import make_dataset, small_schema
from pmt.dataset import (Dataset, EncoderState, apply_encoding, filter_covered, fit_frequency_encoding,
                         load_csv, split_by_project, write_csv)
from pmt.errors import DataError, SchemaError
from pmt.schema import FeatureSchema, FeatureSpec, default_schema, load_schema

HEADER = "project,label,numExecuted,numTestCover,mmsize,MutatorClass\n"


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    path = write(tmp_path, HEADER + "a,Killed,3,1,2.5,M1\na,survived,0,0,1,M2\nb,KILLED,4,2,0.125,M1\n")
    ds = load_csv(path, small_schema())
    assert len(ds) == 3
    assert list(ds.labels) == [1, 0, 1]
    assert ds.records[2].values == {"numExecuted": 4.0, "numTestCover": 2.0, "mmsize": 0.125,
                                    "MutatorClass": "M1"}


def test_load_missing_column(tmp_path):
    path = write(tmp_path, "project,label,numTestCover,mmsize,MutatorClass\na,Killed,1,2,M\n")
    with pytest.raises(SchemaError, match="numExecuted"):
        load_csv(path, small_schema())


def test_load_inconsistent_coverage_names_line_and_column(tmp_path):
    path = write(tmp_path, HEADER + "a,Killed,3,1,2,M\na,Killed,5,0,2,M\n")
    with pytest.raises(DataError, match=r"line 3, columns numExecuted/numTestCover"):
        load_csv(path, small_schema())


@pytest.mark.parametrize("row, column", [
    ("a,Killed,x,1,2,M", "numExecuted"),
    ("a,Timeout,3,1,2,M", "label"),
    ("a,Killed,3,1,,M", "mmsize"),
    ("a,Killed,3,1,nan,M", "mmsize"),
    ("a,Killed,-1,1,2,M", "numExecuted"),
])
def test_load_bad_cells(tmp_path, row, column):
    path = write(tmp_path, HEADER + row + "\n")
    with pytest.raises(DataError, match=f"line 2.*{column}"):
        load_csv(path, small_schema())


def test_load_empty_project(tmp_path):
    path = write(tmp_path, HEADER + ",Killed,3,1,2,M\n")
    with pytest.raises(DataError, match="project"):
        load_csv(path, small_schema())


def test_load_unlabeled(tmp_path):
    path = write(tmp_path, "project,numExecuted,numTestCover,mmsize,MutatorClass,extra\na,3,1,2,M,zzz\n")
    ds = load_csv(path, small_schema(), require_label=False)
    assert ds.labels is None and len(ds) == 1
    with pytest.raises(SchemaError):
        load_csv(path, small_schema())


def test_dataset_is_read_only(toy):
    with pytest.raises(ValueError):
        toy.columns["mmsize"][0] = 1.0


def test_filter_covered_mixed(toy):
    out = filter_covered(toy)
    # covered rows of the fixture: 0, 2, 4, 6, 9
    expected = [i for i, r in enumerate(toy.records) if r.values["numTestCover"] >= 1]
    assert expected == [0, 2, 4, 6, 9]
    assert out == toy.take(expected)


def test_filter_covered_ten_records_four_covered():
    rows = [("p", 0, c, c, float(i), "A") for i, c in enumerate([0, 1, 0, 0, 2, 0, 0, 5, 1, 0])]
    ds = make_dataset(rows)
    out = filter_covered(ds)
    assert len(out) == 4
    assert list(out.columns["mmsize"]) == [1.0, 4.0, 7.0, 8.0]


def test_filter_covered_all_uncovered(toy):
    none = filter_covered(toy.take(np.flatnonzero(toy.columns["numTestCover"] == 0)))
    assert len(none) == 0


def test_filter_covered_table_scale():
    schema = FeatureSchema((FeatureSpec("numExecuted", level="dynamic"), FeatureSpec("numTestCover", level="dynamic")))
    covered, uncovered = 1137336, 1894940
    cover = np.zeros(covered + uncovered)
    cover[np.random.default_rng(0).permutation(len(cover))[:covered]] = 1.0
    ds = Dataset(schema, np.full(len(cover), "p", dtype=object), None,
                 {"numExecuted": cover * 3, "numTestCover": cover})
    assert len(filter_covered(ds)) == 1137336


def test_filter_covered_idempotent_and_pure(toy):
    before = toy.take(np.arange(len(toy)))
    once = filter_covered(toy)
    assert filter_covered(once) == once
    assert toy == before


def test_split_654_projects_522_66_66():
    ids = [f"p{i:03d}" for i in range(654)]
    ds = Dataset(small_schema(), ids, [i % 2 for i in range(654)],
                 {"numExecuted": [1] * 654, "numTestCover": [1] * 654, "mmsize": [0] * 654,
                  "MutatorClass": ["A"] * 654})
    parts = split_by_project(ds, (0.8, 0.1, 0.1), seed=3)
    assert [len(p.project_ids) for p in parts] == [522, 66, 66]


def test_split_three_projects(toy):
    three = toy.take(np.flatnonzero(np.isin(toy.projects, ["p1", "p2", "p3"])))
    parts = split_by_project(three, (1 / 3, 1 / 3, 1 / 3), seed=0)
    assert sorted(len(p.project_ids) for p in parts) == [1, 1, 1]
    assert sum(len(p) for p in parts) == len(three)


def test_split_disjoint_union_deterministic(toy):
    a = split_by_project(toy, (0.6, 0.2, 0.2), seed=5)
    b = split_by_project(toy, (0.6, 0.2, 0.2), seed=5)
    assert all(x == y for x, y in zip(a, b))
    sets = [set(p.project_ids) for p in a]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert set().union(*sets) == set(toy.project_ids)
    assert sum(len(p) for p in a) == len(toy)


def test_split_seed_changes_membership():
    ids = [f"p{i}" for i in range(40)]
    ds = Dataset(small_schema(), ids, [0] * 40,
                 {"numExecuted": [0] * 40, "numTestCover": [0] * 40, "mmsize": [0] * 40, "MutatorClass": ["A"] * 40})
    memberships = {tuple(split_by_project(ds, seed=s)[2].project_ids) for s in range(5)}
    assert len(memberships) > 1


def test_split_errors(toy):
    two = toy.take(np.flatnonzero(np.isin(toy.projects, ["p1", "p2"])))
    with pytest.raises(DataError):
        split_by_project(two)
    with pytest.raises(DataError):
        split_by_project(toy, (0.5, 0.6, -0.1))


def test_encoding_counts(toy):
    enc = fit_frequency_encoding(toy)
    assert enc.counts == {"MutatorClass": {"A": 5, "B": 3, "C": 2}}


def test_encoding_four_tokens():
    rows = [("p", 1, 1, 1, 0.0, t) for t in "ABAA"]
    assert fit_frequency_encoding(make_dataset(rows)).counts["MutatorClass"] == {"A": 3, "B": 1}


def test_encoding_no_categorical_features():
    schema = FeatureSchema((FeatureSpec("x"),))
    ds = Dataset(schema, ["p"], [1], {"x": [1.0]})
    assert fit_frequency_encoding(ds).counts == {}


def test_encoding_overlapping_token_sets():
    schema = FeatureSchema((FeatureSpec("c1", kind="categorical"), FeatureSpec("c2", kind="categorical")))
    ds = Dataset(schema, ["p"] * 4, [0, 1, 0, 1], {"c1": ["x", "x", "y", "x"], "c2": ["y", "y", "x", "z"]})
    assert fit_frequency_encoding(ds).counts == {"c1": {"x": 3, "y": 1}, "c2": {"x": 1, "y": 2, "z": 1}}


def test_apply_encoding_values_and_unseen(toy):
    enc = EncoderState({"MutatorClass": {"A": 3, "B": 1}})
    X = apply_encoding(toy, enc)
    assert X.shape == (10, 4)
    assert list(X[:, 3]) == [3, 1, 3, 3, 0, 1, 3, 0, 1, 3]
    assert np.array_equal(X[:, 2], toy.columns["mmsize"])


def test_apply_encoding_full_schema_hand_encoded():
    schema = default_schema()
    rng = np.random.default_rng(1)
    n = 4
    columns = {}
    for spec in schema:
        if spec.is_categorical:
            columns[spec.name] = ["t1", "t2", "t1", "t1"] if spec.name == "MutatorClass" else ["v", "v", "w", "v"]
        else:
            columns[spec.name] = list(rng.integers(1, 9, n).astype(float))
    ds = Dataset(schema, ["p"] * n, [1, 0, 1, 0], columns)
    X = apply_encoding(ds, fit_frequency_encoding(ds))
    assert X.shape == (4, 30)
    expected = np.empty((4, 30))
    for j, spec in enumerate(schema):
        if spec.name == "MutatorClass":
            expected[:, j] = [3, 1, 3, 3]
        elif spec.name == "returnType":
            expected[:, j] = [3, 3, 1, 3]
        else:
            expected[:, j] = columns[spec.name]
    assert np.array_equal(X, expected)


def test_apply_encoding_schema_mismatch(toy):
    with pytest.raises(SchemaError):
        apply_encoding(toy, EncoderState({}))


tokens = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), min_size=1, max_size=30)


@given(tokens)
def test_encoding_never_zero_for_present_tokens(col):
    ds = make_dataset([("p", 0, 0, 0, 0.0, t) for t in col])
    X = apply_encoding(ds, fit_frequency_encoding(ds))
    assert (X[:, 3] > 0).all()
    assert X[:, 3].sum() == sum(col.count(t) for t in col)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60)
@given(st.lists(st.tuples(finite, st.integers(0, 10**6)), min_size=1, max_size=20))
@example([(-0.0, 0), (-3.0, 2)])
def test_csv_round_trip_bit_exact(tmp_path_factory, values):
    rows = [("proj,with comma", i % 2, c, min(c, 1), v, "M,\"q\"") for i, (v, c) in enumerate(values)]
    ds = make_dataset(rows)
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    write_csv(ds, path)
    back = load_csv(path, small_schema())
    assert back == ds
    assert all(math.copysign(1, a) == math.copysign(1, b)
               for a, b in zip(back.columns["mmsize"], ds.columns["mmsize"]))


def test_default_schema_shape():
    schema = default_schema()
    assert len(schema) == 30
    assert sorted(schema.categorical) == ["MutatorClass", "returnType"]
    assert schema.spec("ppavcc").granularity == "package"
    assert schema.spec("cchalsteadCumulativeBugs").granularity == "class"
    assert schema.spec("mmhalsteadDifficulty").granularity == "method"
    assert schema.spec("numExecuted").level == "dynamic"


def test_schema_json_round_trip(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(default_schema().dumps())
    assert load_schema(path) == default_schema()


@pytest.mark.parametrize("features", [
    (FeatureSpec("a"), FeatureSpec("a")),
    (FeatureSpec("label"),),
])
def test_schema_rejects_bad_names(features):
    with pytest.raises(SchemaError):
        FeatureSchema(features)


def test_feature_spec_validation():
    with pytest.raises(SchemaError):
        FeatureSpec("x", kind="ordinal")
    with pytest.raises(SchemaError):
        FeatureSpec("x", granularity="module")
