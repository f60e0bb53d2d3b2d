import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy.special import expit

from conftest import separable_xy
from pmt.errors import FitError
from pmt.trees import (DecisionTree, GbConfig, GradientBoostedModel, RegressionTree, TreeConfig,
                       bin_thresholds, fit_gb, fit_tree, predict_proba_gb, predict_proba_tree)


# -- exact CART oracle -------------------------------------------------------

def oracle_tree(rows):
    """rows: list of (features tuple, label). Returns a nested tuple tree with Fraction leaves.

    Splits minimize weighted Gini in exact arithmetic; only strictly improving
    splits are taken; ties go to the lowest feature, then the lowest threshold.
    """
    n = len(rows)
    pos = sum(y for _, y in rows)
    if pos in (0, n):
        return Fraction(pos, n)

    def gini_sum(part):
        m = len(part)
        p = sum(y for _, y in part)
        return Fraction(p * p + (m - p) * (m - p), m)

    best, best_score = None, gini_sum(rows)
    for f in range(len(rows[0][0])):
        values = sorted({x[f] for x, _ in rows})
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2
            left = [r for r in rows if r[0][f] <= thr]
            right = [r for r in rows if r[0][f] > thr]
            score = gini_sum(left) + gini_sum(right)
            if score > best_score:
                best, best_score = (f, thr, left, right), score
    if best is None:
        return Fraction(pos, n)
    f, thr, left, right = best
    return (f, thr, oracle_tree(left), oracle_tree(right))


def oracle_predict(tree, x):
    while isinstance(tree, tuple):
        f, thr, left, right = tree
        tree = left if x[f] <= thr else right
    return tree


def test_separable_one_dimensional():
    tree = fit_tree([[0.0], [1.0]], [0, 1])
    assert tree.n_leaves == 2 and tree.threshold[0] == 0.5
    assert list(tree.predict_proba([[0.0], [1.0]])) == [0.0, 1.0]


@pytest.mark.parametrize("label", [0, 1])
def test_pure_labels_single_leaf(label):
    tree = fit_tree(np.arange(6.0).reshape(3, 2), [label] * 3)
    assert tree.n_nodes == 1 and tree.value[0] == label


def test_xor_depth_two():
    X = [[0, 0], [0, 1], [1, 0], [1, 1]]
    y = [0, 1, 1, 0]
    tree = fit_tree(X, y)
    # every single split of XOR leaves weighted Gini unchanged, so no split improves
    assert tree.n_nodes == 1
    assert oracle_tree([(tuple(x), t) for x, t in zip(X, y)]) == Fraction(1, 2)


def test_xor_with_imbalance_grows_depth_two():
    X = [[0, 0], [0, 1], [1, 0], [1, 1], [1, 1]]
    y = [0, 1, 1, 0, 0]
    tree = fit_tree(X, y)
    assert tree.depth() == 2
    assert list(tree.predict_proba(X)) == [float(v) for v in y]


def test_hand_built_tree_routing():
    tree = DecisionTree(feature=[1, -1, -1], threshold=[2.5, 0, 0], left=[1, -1, -1], right=[2, -1, -1],
                        value=[0.5, 0.2, 0.9], n_features=2)
    assert predict_proba_tree(tree, [100.0, 2.5]) == 0.2
    assert predict_proba_tree(tree, [-100.0, 2.6]) == 0.9
    with pytest.raises(ValueError):
        predict_proba_tree(tree, [1.0, 2.0, 3.0])


def test_single_leaf_constant():
    tree = DecisionTree([-1], [0.0], [-1], [-1], [0.3], n_features=4)
    assert np.all(tree.predict_proba(np.random.default_rng(0).normal(size=(5, 4))) == 0.3)


def test_malformed_tree_rejected():
    with pytest.raises(ValueError):
        DecisionTree([0, -1, -1], [0.5, 0, 0], [1, -1, -1], [1, -1, -1], [0.5, 0, 1], n_features=1)


def test_fully_grown_tree_reproduces_training_labels():
    X, y = separable_xy(100, seed=2)
    X = X + np.random.default_rng(5).normal(scale=0.3, size=X.shape)
    tree = fit_tree(X, y)
    assert np.array_equal(tree.predict_proba(X), y.astype(float))


def test_full_fraction_ignores_seed():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(60, 5)), rng.integers(0, 2, 60)
    a, b = fit_tree(X, y, seed=1), fit_tree(X, y, seed=999)
    assert a.to_dict() == b.to_dict()


def test_feature_subsampling_depends_on_seed():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(80, 10)), rng.integers(0, 2, 80)
    cfg = TreeConfig(max_features_fraction=0.3)
    trees = {json.dumps(fit_tree(X, y, cfg, seed=s).to_dict()) for s in range(5)}
    assert len(trees) > 1


def test_candidate_count():
    assert TreeConfig(max_features_fraction=0.7).n_candidates(30) == 21
    assert TreeConfig(max_features_fraction=0.01).n_candidates(30) == 1
    with pytest.raises(ValueError):
        TreeConfig(max_features_fraction=0.0)


def test_stopping_constraints():
    X, y = separable_xy(50, seed=1)
    X = X + np.random.default_rng(1).normal(scale=1.0, size=X.shape)
    assert fit_tree(X, y, TreeConfig(max_depth=1)).depth() <= 1
    tree = fit_tree(X, y, TreeConfig(min_samples_leaf=7))
    counts = np.bincount(tree.apply(X), minlength=tree.n_nodes)
    assert counts[tree.feature < 0].min() >= 7


def test_empty_input_rejected():
    with pytest.raises(FitError):
        fit_tree(np.empty((0, 2)), [])


def weighted_gini(y):
    if len(y) == 0:
        return 0.0
    p = np.mean(y)
    return len(y) * 2 * p * (1 - p)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_every_split_reduces_gini(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(40, 3)).astype(float)
    y = rng.integers(0, 2, 40)
    tree = fit_tree(X, y, TreeConfig(max_features_fraction=0.67), seed=seed)
    leaf_of = np.zeros((tree.n_nodes, len(y)), dtype=bool)
    for k in range(tree.n_nodes):
        sub = DecisionTree(tree.feature, tree.threshold, tree.left, tree.right, np.eye(tree.n_nodes)[k], 3)
        leaf_of[k] = sub.predict_value(X) > 0
    reach = np.zeros((tree.n_nodes, len(y)), dtype=bool)
    reach[0] = True
    for k in range(tree.n_nodes):
        if tree.feature[k] >= 0:
            go_left = X[:, tree.feature[k]] <= tree.threshold[k]
            reach[tree.left[k]] = reach[k] & go_left
            reach[tree.right[k]] = reach[k] & ~go_left
    for k in np.flatnonzero(tree.feature >= 0):
        parent = weighted_gini(y[reach[k]])
        children = weighted_gini(y[reach[tree.left[k]]]) + weighted_gini(y[reach[tree.right[k]]])
        assert children < parent
    for k in np.flatnonzero(tree.feature < 0):
        assert tree.value[k] == pytest.approx(y[reach[k]].mean(), abs=1e-15)


def test_cart_matches_exact_oracle_on_random_binary_sets():
    rng = np.random.default_rng(7)
    grid = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=float)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        X = grid[rng.integers(0, 8, n)]
        y = rng.integers(0, 2, n)
        tree = fit_tree(X, y)
        oracle = oracle_tree([(tuple(x), int(t)) for x, t in zip(X, y)])
        expected = [float(oracle_predict(oracle, g)) for g in grid]
        assert list(tree.predict_proba(grid)) == expected


# -- gradient boosting -------------------------------------------------------

def test_gb_rejects_single_class():
    with pytest.raises(FitError):
        fit_gb(np.zeros((10, 1)), np.ones(10))


def test_gb_rejects_zero_learning_rate():
    with pytest.raises(ValueError):
        GbConfig(learning_rate=0.0)


def test_gb_separable_loss_strictly_decreases():
    X = np.linspace(0, 1, 100)[:, None]
    y = (X[:, 0] > 0.5).astype(int)
    model = fit_gb(X, y, GbConfig(n_iterations=10), record_loss=True)
    trace = model.loss_trace
    assert len(trace) == 11
    assert all(b < a for a, b in zip(trace, trace[1:]))


def test_gb_tiny_learning_rate_stays_at_base_rate():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(200, 2)), (rng.random(200) < 0.3).astype(int)
    model = fit_gb(X, y, GbConfig(n_iterations=5, learning_rate=1e-9))
    assert np.allclose(model.predict_proba(X), y.mean(), atol=1e-8)


def test_gb_zero_trees_is_base_rate():
    y = np.array([1, 0, 0, 0])
    model = GradientBoostedModel(math.log(0.25 / 0.75), [], 2)
    assert predict_proba_gb(model, [3.0, 4.0]) == pytest.approx(0.25, abs=1e-15)
    assert fit_gb(np.arange(8.0).reshape(4, 2), y, GbConfig(n_iterations=1)).baseline == model.baseline


def stump(value_left, value_right, feature=0, threshold=0.0, width=2):
    return RegressionTree([feature, -1, -1], [threshold, 0, 0], [1, -1, -1], [2, -1, -1],
                          [0.0, value_left, value_right], width)


def test_gb_hand_scored_model():
    model = GradientBoostedModel(0.2, [stump(-0.3, 0.5), stump(0.1, -0.7, feature=1, threshold=2.0)], 2)
    X = np.array([[-1.0, 1.0], [1.0, 3.0], [0.0, 2.0]])
    raw = np.array([0.2 - 0.3 + 0.1, 0.2 + 0.5 - 0.7, 0.2 - 0.3 + 0.1])
    assert np.allclose(model.raw_score(X), raw, rtol=0, atol=1e-12)
    assert np.allclose(model.predict_proba(X), 1 / (1 + np.exp(-raw)), rtol=0, atol=1e-12)


def test_gb_monotone_in_leaf_value():
    x = np.array([[1.0, 0.0]])
    probs = [GradientBoostedModel(0.0, [stump(0.0, v)], 2).predict_proba(x)[0] for v in (-50, -1, 0, 1, 50, 1e6)]
    assert probs == sorted(probs) and probs[-1] == 1.0


def test_gb_width_mismatch():
    model = GradientBoostedModel(0.0, [stump(0.1, 0.2)], 2)
    with pytest.raises(ValueError):
        model.predict_proba(np.zeros((1, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_gb_loss_non_increasing_on_noisy_data(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(300, 4))
    y = (X[:, 0] + rng.normal(size=300) > 0).astype(int)
    trace = fit_gb(X, y, GbConfig(n_iterations=30), record_loss=True).loss_trace
    assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))


def brute_best_split(X, grad, hess, min_leaf):
    G, H = grad.sum(), hess.sum()
    best = (1e-12, None, None)
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values, values[1:]):
            thr = lo / 2 + hi / 2
            left = X[:, f] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            gl, hl = grad[left].sum(), hess[left].sum()
            gain = gl ** 2 / hl + (G - gl) ** 2 / (H - hl) - G ** 2 / H
            if gain > best[0] + 1e-9:
                best = (gain, f, thr)
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
@example(147)  # mirrored partitions on features 1 and 2 tie exactly; lowest feature must win
def test_histogram_split_matches_exact_enumeration(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 12, size=(60, 3)).astype(float) * 0.37
    y = rng.integers(0, 2, 60)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    model = fit_gb(X, y, GbConfig(n_iterations=1, max_leaf_nodes=2, min_samples_leaf=3, learning_rate=1.0))
    p = np.full(60, y.mean())
    gain, f, thr = brute_best_split(X, p - y, p * (1 - p), 3)
    tree = model.trees[0]
    if f is None:
        assert tree.n_nodes == 1
    else:
        assert (tree.feature[0], tree.threshold[0]) == (f, thr)
        left = X[:, f] <= thr
        g = p - y
        h = p * (1 - p)
        assert tree.value[1] == pytest.approx(-g[left].sum() / h[left].sum(), rel=1e-12)


def test_bin_thresholds_small_domain_are_midpoints():
    assert list(bin_thresholds(np.array([3.0, 1.0, 2.0, 1.0]), 255)) == [1.5, 2.5]
    assert len(bin_thresholds(np.arange(1000.0), 16)) <= 15


def test_serialization_round_trip_bit_exact():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(150, 3))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    gb = fit_gb(X, y, GbConfig(n_iterations=8))
    back = GradientBoostedModel.from_dict(json.loads(json.dumps(gb.to_dict())))
    assert np.array_equal(back.predict_proba(X), gb.predict_proba(X))
    tree = fit_tree(X, y, TreeConfig(max_features_fraction=0.7), seed=4)
    tree2 = DecisionTree.from_dict(json.loads(json.dumps(tree.to_dict())))
    assert np.array_equal(tree2.predict_proba(X), tree.predict_proba(X))


def test_gb_predictions_consistent_with_training_updates():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 3))
    y = (X[:, 0] + 0.5 * rng.normal(size=200) > 0).astype(int)
    model = fit_gb(X, y, GbConfig(n_iterations=12), record_loss=True)
    raw = model.raw_score(X)
    assert model.loss_trace[-1] == pytest.approx(float(np.mean(np.logaddexp(0, raw) - y * raw)), rel=1e-12)
    assert np.allclose(predict_proba_gb(model, X), expit(raw))
