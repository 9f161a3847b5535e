import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import make_dataset
from treepoison.attacks import (STRATEGIES, AttackConfig, AttackError, AttackTrace, budget_size, entropy_attack,
                                greedy_round, kmedoids_attack, neighborhood_entropies, random_attack, run_attack,
                                two_medoids)
from treepoison.dataset import Dataset, standardized_distances
from treepoison.ensemble import ForestParams
from treepoison.metrics import Metrics
from treepoison.tree import TreeParams


def _pair(rng, n=50, d=3, ties=False):
    return make_dataset(rng, n, d, ties=ties), make_dataset(rng, 30, d)


def test_budget_rounding():
    assert budget_size(0.10, 455) == 46
    assert budget_size(0.01, 50) == 1  # 0.5 rounds half up
    assert budget_size(0.0, 100) == 0


def test_config_validation():
    with pytest.raises(AttackError):
        AttackConfig("nope")
    with pytest.raises(AttackError):
        AttackConfig(budget_fraction=0.2)
    with pytest.raises(AttackError):
        AttackConfig(target_class=0)
    with pytest.raises(AttackError):
        AttackConfig(threads=0)
    assert AttackConfig(budget_fraction=0.2, max_budget_fraction=0.5).budget_fraction == 0.2


# --- greedy_round ---------------------------------------------------------------------------------

def _table(accs):
    calls = []

    def evaluate(i):
        calls.append(i)
        return accs[i], 1
    return evaluate, calls


@pytest.mark.parametrize("mode", ["exhaustive", "early_stop"])
def test_single_loss_chosen(mode):
    ev, _ = _table({0: 0.9, 1: 0.95, 2: 0.7, 3: 0.91})
    assert greedy_round([0, 1, 2, 3], ev, mode, 0.8).chosen == 2


def test_exhaustive_picks_min_with_index_ties():
    ev, calls = _table({5: 0.6, 3: 0.6, 9: 0.7})
    r = greedy_round([5, 3, 9], ev, "exhaustive", 0.8)
    assert r.chosen == 3 and r.candidates_evaluated == 3 and len(calls) == 3
    assert r.caused_loss


def test_fallback_smallest_increase():
    ev, _ = _table({0: 0.95, 1: 0.9, 2: 0.9, 3: 0.99})
    for mode in ("exhaustive", "early_stop"):
        r = greedy_round([0, 1, 2, 3], ev, mode, 0.85)
        assert r.chosen == 1 and not r.caused_loss and r.candidates_evaluated == 4


def test_tes_scan_order_example():
    # candidates a, b, c with scores 0.9, 0.1, 0.5; only b causes a loss
    a, b, c = 10, 11, 12
    scores = {a: 0.9, b: 0.1, c: 0.5}
    ev, calls = _table({a: 0.9, b: 0.7, c: 0.85})
    order = sorted([a, b, c], key=lambda i: (scores[i], i))
    r = greedy_round(order, ev, "early_stop", 0.8)
    assert r.chosen == b and r.candidates_evaluated == 1 and calls == [b]


def test_early_stop_first_qualifying_position():
    ev, _ = _table({0: 0.9, 1: 0.5, 2: 0.1, 3: 0.7})
    r = greedy_round([0, 1, 2, 3], ev, "early_stop", 0.8)
    assert r.chosen == 1 and r.candidates_evaluated == 2 and r.workload == 2


def test_empty_candidates():
    with pytest.raises(AttackError):
        greedy_round([], lambda i: (0.0, 0), "exhaustive", 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=30), st.integers(1, 16), st.integers(0, 21),
       st.sampled_from(["exhaustive", "early_stop"]))
def test_round_independent_of_threads(levels, threads, base, mode):
    from concurrent.futures import ThreadPoolExecutor
    accs = {i: a / 20 for i, a in enumerate(levels)}
    cands = list(range(len(levels)))
    want = greedy_round(cands, lambda i: (accs[i], 1), mode, base / 20)
    with ThreadPoolExecutor(threads) as ex:
        got = greedy_round(cands, lambda i: (accs[i], 1), mode, base / 20, threads, ex)
    assert (got.chosen, got.accuracy, got.caused_loss) == (want.chosen, want.accuracy, want.caused_loss)
    assert (got.candidates_evaluated, got.workload) == (want.candidates_evaluated, want.workload)


# --- run_attack -----------------------------------------------------------------------------------

@pytest.mark.parametrize("strategy", STRATEGIES)
def test_k_zero_is_empty(rng, strategy):
    train, test = _pair(rng)
    t = run_attack(TreeParams(3), train, AttackConfig(strategy), eval_set=test, k=0)
    assert t.rounds == [] and t.k == 0


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_trace_invariants(rng, strategy):
    train, test = _pair(rng, 60)
    k = 5
    t = run_attack(ForestParams(2, TreeParams(3)), train, AttackConfig(strategy, seed=3), eval_set=test, k=k)
    assert len(t.rounds) == k
    assert len(set(t.flips)) == k
    assert all(train.labels[i] == 1 for i in t.flips)
    assert t.wall_time >= 0
    p = t.poisoned(train)
    assert sorted(p.flips) == sorted(t.flips)


def test_negative_target_class(rng):
    train, test = _pair(rng, 60)
    t = run_attack(TreeParams(3), train, AttackConfig("timber", target_class=-1), eval_set=test, k=4)
    assert all(train.labels[i] == -1 for i in t.flips)


def test_budget_exceeding_targets(rng):
    train = Dataset(np.arange(10.0), [1, 1] + [-1] * 8)
    with pytest.raises(AttackError):
        run_attack(TreeParams(2), train, AttackConfig("greedy"), eval_set=train, k=3)


def test_eval_set_required(rng):
    train, _ = _pair(rng)
    with pytest.raises(AttackError):
        run_attack(TreeParams(2), train, AttackConfig("greedy"), k=1)


@settings(max_examples=25, deadline=None)
@given(st.integers(20, 60), st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.booleans(),
       st.integers(0, 10**6))
def test_timber_matches_greedy(n, dd, n_trees, depth, ties, seed):
    r = np.random.default_rng(seed)
    train, test = make_dataset(r, n, dd, ties=ties), make_dataset(r, 25, dd)
    fp = ForestParams(n_trees, TreeParams(depth))
    k = min(4, int(np.count_nonzero(train.labels == 1)))
    a = run_attack(fp, train, AttackConfig("timber"), eval_set=test, k=k)
    b = run_attack(fp, train, AttackConfig("greedy"), eval_set=test, k=k)
    assert a.flips == b.flips
    assert [x.accuracy for x in a.rounds] == [x.accuracy for x in b.rounds]
    for x, y in zip(a.rounds, b.rounds):
        assert x.retrain_workload <= y.retrain_workload


def test_early_stop_strategies_always_flip_k(rng):
    train, test = _pair(rng, 60)
    for s in ("tes", "ges"):
        t = run_attack(TreeParams(3), train, AttackConfig(s), eval_set=test, k=6)
        assert len(t.rounds) == 6
        assert all(r.candidates_evaluated >= 1 for r in t.rounds)


def test_greedy_matches_single_tree_reference(rng):
    for _ in range(5):
        train, test = _pair(rng, 35, 2)
        t = run_attack(TreeParams(3), train, AttackConfig("greedy"), eval_set=test, k=3)
        flips, accs = oracle.greedy_reference(train.features, train.labels, test.features, test.labels, 3, 3)
        assert t.flips == flips
        assert [r.accuracy for r in t.rounds] == pytest.approx(accs, abs=1e-12)


def test_timber_workload_strictly_smaller(rng):
    train, test = _pair(rng, 80)
    a = run_attack(TreeParams(4), train, AttackConfig("timber"), eval_set=test, k=3)
    b = run_attack(TreeParams(4), train, AttackConfig("greedy"), eval_set=test, k=3)
    assert a.total_workload < b.total_workload


@pytest.mark.parametrize("strategy", ["greedy", "timber", "tes", "ges"])
def test_thread_count_does_not_change_trace(rng, strategy):
    train, test = _pair(rng, 60)
    fp = ForestParams(3, TreeParams(3), feature_subsample=0.7, seed=4)
    a = run_attack(fp, train, AttackConfig(strategy, threads=1), eval_set=test, k=4)
    b = run_attack(fp, train, AttackConfig(strategy, threads=16), eval_set=test, k=4)
    assert a.to_dict(timing=False) == b.to_dict(timing=False)


def test_mean_scores_recorded(rng):
    train, test = _pair(rng, 40)
    t = run_attack(TreeParams(3), train, AttackConfig("timber"), eval_set=test, k=3)
    assert t.mean_scores.shape == (train.n,)
    assert np.all((t.mean_scores > 0) & (t.mean_scores <= 1))
    assert run_attack(TreeParams(3), train, AttackConfig("greedy"), eval_set=test, k=1).mean_scores is None


def test_trace_csv():
    t = AttackTrace("timber", 1, Metrics(1.0, 1.0))
    from treepoison.attacks import AttackRound
    t.rounds.append(AttackRound(4, 0.5, 0.25, 7, 30, True))
    assert t.to_csv() == "round,flipped_index,accuracy,f1,workload,candidates_evaluated\n1,4,0.5,0.25,30,7\n"
    assert t.total_workload == 30


# --- model-agnostic strategies --------------------------------------------------------------------

def test_random_deterministic_and_complete():
    d = Dataset(np.arange(20.0), [1] * 12 + [-1] * 8)
    assert random_attack(d, 5, seed=3) == random_attack(d, 5, seed=3)
    assert sorted(random_attack(d, 12, seed=9)) == list(range(12))


def test_random_union_covers_targets():
    d = Dataset(np.arange(30.0), [1, -1] * 15)
    seen = set()
    for seed in range(1000):
        seen.update(random_attack(d, 2, seed=seed))
    assert seen == set(range(0, 30, 2))


def test_entropy_all_targets():
    d = make_dataset(np.random.default_rng(1), 30, 2)
    targets = np.flatnonzero(d.labels == 1).tolist()
    assert sorted(entropy_attack(d, len(targets))) == targets


def test_entropy_identical_instances_equal_scores():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 0.5], [3.0, 3.0], [0.2, 0.1]])
    h = neighborhood_entropies(Dataset(X, [1, 1, -1, 1, -1, -1]), n_neighbors=3)
    assert h[0] == h[1]


def _two_clusters():
    # six positives around (0,0), six negatives around (5,5); point 5 is a positive near the boundary
    pos = [[0, 0], [0.3, 0], [0, 0.3], [0.3, 0.3], [0.15, 0.15], [2.5, 2.5]]
    neg = [[5, 5], [5.3, 5], [5, 5.3], [5.3, 5.3], [5.15, 5.15], [2.8, 2.8]]
    return Dataset(np.array(pos + neg, dtype=float), [1] * 6 + [-1] * 6)


def test_entropy_prefers_deep_cluster_members():
    d = _two_clusters()
    h = neighborhood_entropies(d, n_neighbors=4)
    # inside the positive cluster the 4 nearest neighbours are all positive
    assert all(h[i] == 0 for i in range(5))
    assert h[5] > 0
    chosen = entropy_attack(d, 5, n_neighbors=4)
    assert 5 not in chosen and chosen == [0, 1, 2, 3, 4]


def _exhaustive_medoids(D):
    n = D.shape[0]
    return min(itertools.combinations(range(n), 2),
               key=lambda m: (np.minimum(D[:, m[0]], D[:, m[1]]).sum(), m))


def test_two_medoids_one_per_blob():
    d = _two_clusters()
    D = standardized_distances(d)
    (a, b), labels = two_medoids(D)
    assert a < 6 <= b
    assert (a, b) == _exhaustive_medoids(D)
    assert labels[:6].tolist() == [0] * 6 and labels[6:].tolist() == [1] * 6


def test_two_medoids_matches_exhaustive_on_blobs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(4, 13))
        X = np.vstack([rng.normal(0, 0.3, (n // 2, 2)), rng.normal(6, 0.3, (n - n // 2, 2))])
        D = standardized_distances(Dataset(X, [1] * n))
        m, _ = two_medoids(D)
        cost = lambda m: np.minimum(D[:, m[0]], D[:, m[1]]).sum()
        assert cost(m) == pytest.approx(cost(_exhaustive_medoids(D)), abs=1e-9)


def test_two_medoids_degenerate():
    (a, b), labels = two_medoids(np.zeros((5, 5)))
    assert (a, b) == (0, 2) and labels.tolist() == [0, 0, 1, 1, 1]


def test_kmedoids_k1_nearest_to_opposite_medoid():
    d = _two_clusters()
    D = standardized_distances(d)
    (_, neg_medoid), _ = two_medoids(D)
    # the negative cluster holds no positives, so its medoid is the reference point
    want = min(range(6), key=lambda i: (D[i, neg_medoid], i))
    assert kmedoids_attack(d, 1) == [want] == [5]
    assert kmedoids_attack(d, 3) == kmedoids_attack(d, 3)
