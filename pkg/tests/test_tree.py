import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import two_sided_region, make_dataset
from treepoison.dataset import Dataset, LabelCounts
from treepoison.tree import (DecisionTree, Leaf, Node, Split, TreeParams, candidate_splits, dumps, entropy,
                             information_gain, loads, predict, predict_many, same_structure, split_counts,
                             tree_train)


def test_entropy_examples():
    assert entropy(LabelCounts(5, 5)) == pytest.approx(1.0, abs=1e-12)
    assert entropy(LabelCounts(7, 0)) == 0.0
    assert entropy(LabelCounts(0, 7)) == 0.0
    assert entropy(LabelCounts(6, 5)) == pytest.approx(0.99403, abs=1e-5)
    assert entropy(LabelCounts(6, 5)) == pytest.approx(oracle.entropy_direct(6, 5), abs=1e-15)


def test_entropy_empty():
    with pytest.raises(ValueError):
        entropy(LabelCounts(0, 0))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 500), st.integers(0, 500))
def test_entropy_matches_closed_form(p, q):
    if p + q == 0:
        return
    h = entropy(LabelCounts(p, q))
    assert 0.0 <= h <= 1.0 + 1e-12
    assert h == pytest.approx(oracle.entropy_direct(p, q), abs=1e-12)


def test_candidate_splits_distinct_values():
    d = Dataset(np.array([[0.0], [1.0], [1.0]]), [1, -1, 1])
    assert candidate_splits(d) == [Split(0, 0.0), Split(0, 1.0)]


def test_candidate_splits_all_distinct():
    d = Dataset(np.array([[0.0, 5.0], [1.0, 3.0]]), [1, -1])
    assert candidate_splits(d) == [Split(0, 0.0), Split(0, 1.0), Split(1, 3.0), Split(1, 5.0)]


def test_candidate_splits_ignore_labels(rng):
    d = make_dataset(rng, 30, 3, ties=True)
    assert candidate_splits(d) == candidate_splits(d.flip(0).flip(7))
    assert candidate_splits(d) == sorted(candidate_splits(d))


def test_gain_perfect_separation():
    d = Dataset(np.array([0.0] * 4 + [1.0] * 4), [1] * 4 + [-1] * 4)
    assert information_gain(d, None, Split(0, 0.0)) == pytest.approx(1.0, abs=1e-12)


def test_gain_same_proportions_is_zero():
    d = Dataset(np.array([0.0, 0.0, 1.0, 1.0]), [1, -1, 1, -1])
    assert information_gain(d, None, Split(0, 0.0)) == 0.0


def test_gain_empty_side_is_zero():
    d = Dataset(np.array([0.0, 1.0]), [1, -1])
    assert information_gain(d, None, Split(0, 1.0)) == 0.0


def test_gain_two_sided_region():
    d = two_sided_region()
    assert split_counts(d, None, Split(0, 0.0)) == (4, 1, 2, 4)
    g = information_gain(d, None, Split(0, 0.0))
    assert g == pytest.approx(0.165, abs=0.005)
    assert g == pytest.approx(oracle.gain_direct(4, 1, 2, 4), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 60), st.integers(0, 60), st.integers(0, 60), st.integers(0, 60))
def test_gain_matches_textbook_formula(lp, ln, rp, rn):
    if lp + ln == 0 or rp + rn == 0:
        return
    x = [0.0] * (lp + ln) + [1.0] * (rp + rn)
    y = [1] * lp + [-1] * ln + [1] * rp + [-1] * rn
    g = information_gain(Dataset(np.array(x), y), None, Split(0, 0.0))
    want = oracle.gain_direct(lp, ln, rp, rn)
    assert g == pytest.approx(want if want >= 1e-12 else 0.0, abs=1e-12)


def test_gain_region_restricts_rows():
    d = two_sided_region()
    assert information_gain(d, [0, 1, 5, 6], Split(0, 0.0)) == 0.0


# --- training -----------------------------------------------------------------------------------

def test_pure_region_is_a_leaf():
    t = tree_train(Dataset(np.arange(5.0), [-1] * 5))
    assert isinstance(t.root, Leaf) and t.root.label == -1


def test_two_point_tree():
    t = tree_train(Dataset(np.array([0.0, 1.0]), [1, -1]))
    assert isinstance(t.root, Node)
    assert t.root.split == Split(0, 0.0)
    assert (t.root.left.label, t.root.right.label) == (1, -1)
    assert t.root.left.train_set.tolist() == [0] and t.root.right.train_set.tolist() == [1]


def test_tied_leaf_goes_positive():
    # identical features: no split can separate, so a (3,3) leaf results
    t = tree_train(Dataset(np.zeros(6), [1, -1, 1, -1, 1, -1]))
    assert isinstance(t.root, Leaf) and t.root.label == 1


def test_max_depth_one_is_a_stump():
    d = Dataset(np.array([0.0, 1.0, 2.0, 3.0]), [1, -1, 1, -1])
    t = tree_train(d, params=TreeParams(max_depth=1))
    assert t.depth() <= 1


def test_ties_go_to_lexicographically_first():
    # both features separate perfectly; feature 0 comes first
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    t = tree_train(Dataset(X, [1, -1]))
    assert t.root.split == Split(0, 0.0)
    # within one feature, two thresholds of the same gain: the smaller wins
    d = Dataset(np.array([0.0, 1.0, 2.0, 3.0]), [1, -1, -1, 1])
    t = tree_train(d, params=TreeParams(max_depth=1))
    g0 = information_gain(d, None, Split(0, 0.0))
    g2 = information_gain(d, None, Split(0, 2.0))
    assert g0 == g2
    assert t.root.split == Split(0, 0.0)


def test_min_gain_is_strict():
    d = two_sided_region()
    g = information_gain(d, None, Split(0, 0.0))
    assert isinstance(tree_train(d, params=TreeParams(min_gain=g)).root, Leaf)
    assert isinstance(tree_train(d, params=TreeParams(min_gain=g * 0.999)).root, Node)


def test_region_argument(rng):
    d = make_dataset(rng, 40, 2)
    region = np.arange(0, 40, 2)
    t = tree_train(d, region, TreeParams(4))
    assert t.root.train_set.tolist() == region.tolist()
    assert oracle.as_tuple(t.root) == oracle.build(d.features, d.labels, region, 4)


def test_empty_region_rejected():
    with pytest.raises(ValueError):
        tree_train(Dataset(np.arange(3.0), [1, -1, 1]), [])


def test_region_out_of_range_rejected():
    with pytest.raises((IndexError, ValueError)):
        tree_train(Dataset(np.arange(3.0), [1, -1, 1]), [0, 5])


def test_params_validation():
    with pytest.raises(ValueError):
        TreeParams(max_depth=0)
    with pytest.raises(ValueError):
        TreeParams(min_gain=-1.0)


def test_feature_subset_only_uses_those_features(rng):
    d = make_dataset(rng, 60, 4)
    t = tree_train(d, params=TreeParams(5), features=[1, 3])
    used = {n.split.feature for _, n in t.nodes() if isinstance(n, Node)}
    assert used <= {1, 3}
    assert oracle.as_tuple(t.root) == oracle.build(d.features, d.labels, np.arange(60), 5, features=[1, 3])


@pytest.mark.parametrize("ties", [False, True])
def test_matches_reference_builder(rng, ties):
    for _ in range(40):
        n, dd = int(rng.integers(5, 90)), int(rng.integers(1, 5))
        d = make_dataset(rng, n, dd, ties=ties)
        depth = int(rng.integers(1, 8))
        t = tree_train(d, params=TreeParams(depth))
        assert oracle.as_tuple(t.root) == oracle.build(d.features, d.labels, np.arange(n), depth)


def _check_invariants(t: DecisionTree, d: Dataset):
    for depth, node in t.nodes():
        assert node.train_set.size > 0
        assert depth <= t.params.max_depth
        if isinstance(node, Node):
            l, r = node.left.train_set, node.right.train_set
            assert np.intersect1d(l, r).size == 0
            assert np.array_equal(np.union1d(l, r), node.train_set)
            assert np.all(d.features[l, node.split.feature] <= node.split.threshold)
            assert np.all(d.features[r, node.split.feature] > node.split.threshold)
            assert node.gain > 0
            assert node.gain == information_gain(d, node.train_set, node.split)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(1, 4), st.integers(1, 10), st.booleans(), st.integers(0, 10**6))
def test_structural_invariants(n, dd, depth, ties, seed):
    d = make_dataset(np.random.default_rng(seed), n, dd, ties=ties)
    _check_invariants(tree_train(d, params=TreeParams(depth)), d)


def test_deterministic(rng):
    d = make_dataset(rng, 100, 3)
    assert same_structure(tree_train(d, params=TreeParams(6)), tree_train(d, params=TreeParams(6)))


def test_pure_training_accuracy_with_distinct_rows(rng):
    d = make_dataset(rng, 120, 3)
    t = tree_train(d, params=TreeParams(100))
    assert np.array_equal(predict_many(t, d.features), d.labels)


def test_workload_counters(rng):
    d = make_dataset(rng, 50, 2)
    t = tree_train(d, params=TreeParams(5))
    assert t.workload == 50
    assert t.stats.nodes == sum(1 for _ in t.nodes())
    assert t.stats.instances == sum(n.train_set.size for _, n in t.nodes())


# --- prediction -----------------------------------------------------------------------------------

def hand_tree() -> DecisionTree:
    e = np.array([0], dtype=np.intp)
    left = Node(Split(1, 5.0), Leaf(1, e), Leaf(-1, e), e, 1.0)
    right = Node(Split(1, 8.0), Leaf(1, e), Leaf(-1, e), e, 1.0)
    return DecisionTree(Node(Split(0, 10.0), left, right, e, 1.0), TreeParams(2), 2)


def test_hand_tree_predictions():
    t = hand_tree()
    assert predict(t, [12, 7]) == 1
    assert predict(t, [8, 6]) == -1


def test_boundary_goes_left():
    t = hand_tree()
    assert predict(t, [10, 5]) == 1
    assert predict(t, [10.0000001, 8]) == 1
    assert predict(t, [10.0000001, 8.0000001]) == -1


def test_leaf_predicts_its_label():
    t = DecisionTree(Leaf(1, np.array([0])), TreeParams(), 1)
    assert predict(t, [123.0]) == 1


def test_predict_many_matches_predict(rng):
    d = make_dataset(rng, 80, 3)
    t = tree_train(d, params=TreeParams(4))
    X = rng.normal(size=(50, 3))
    assert predict_many(t, X).tolist() == [predict(t, x) for x in X]


# --- serialization --------------------------------------------------------------------------------

def test_round_trip(rng):
    d = make_dataset(rng, 60, 3)
    t = tree_train(d, params=TreeParams(5), annotate=True)
    back = loads(dumps(t))
    assert same_structure(t, back)
    assert back.params == t.params
    X = rng.normal(size=(30, 3))
    assert np.array_equal(predict_many(back, X), predict_many(t, X))


def test_serialized_field_order(rng):
    import json
    d = make_dataset(rng, 10, 2)
    obj = json.loads(dumps(tree_train(d)))
    assert list(obj) == ["format", "version", "params", "n_features", "features", "root"]
    assert obj["format"] == "treepoison.tree" and obj["version"] == 1


def test_rejects_unknown_format():
    with pytest.raises(ValueError):
        loads('{"format": "other", "version": 1}')
