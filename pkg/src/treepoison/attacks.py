"""Label-flipping attacks: Greedy, GES, Timber, TES, Entropy, K-Medoids, Random.

The four greedy-family strategies flip one instance per round, picking among
the not-yet-flipped target-class instances by the eval-set accuracy of the
model retrained with that flip. Greedy and GES retrain from scratch; Timber
and TES retrain only the invalidated sub-trees of an annotated forest, so
Timber makes exactly Greedy's choices. GES and TES stop a round at the first
candidate that lowers accuracy (GES in index order, TES in ascending score
order). When no candidate lowers accuracy, the round flips the one with the
smallest accuracy increase.
"""

from __future__ import annotations

import csv
import io
import json
import threading
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .dataset import NEGATIVE, POSITIVE, Dataset, standardized_distances
from .ensemble import Forest, ForestParams, forest_flip_retrain, forest_scores, forest_train
from .metrics import Metrics, metrics_from_predictions
from .tree import Leaf, TreeParams, entropy

STRATEGIES = ("greedy", "ges", "timber", "tes", "entropy", "kmedoids", "random")
GREEDY_FAMILY = ("greedy", "ges", "timber", "tes")
INCREMENTAL = ("timber", "tes")
EARLY_STOP = ("ges", "tes")

RoundMode = Literal["exhaustive", "early_stop"]


class AttackError(ValueError):
    pass


def budget_size(fraction: float, n_train: int) -> int:
    return int(np.floor(fraction * n_train + 0.5))


@dataclass(frozen=True)
class AttackConfig:
    strategy: str = "timber"
    budget_fraction: float = 0.10
    target_class: int = POSITIVE
    seed: int = 0
    threads: int = 1
    eval_set: Optional[Dataset] = field(default=None, compare=False, repr=False)
    score_aggregation: str = "mean"
    max_budget_fraction: float = 0.10
    entropy_neighbors: int = 10

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise AttackError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0 <= self.budget_fraction <= self.max_budget_fraction:
            raise AttackError(f"budget_fraction {self.budget_fraction} outside [0, {self.max_budget_fraction}]")
        if self.target_class not in (POSITIVE, NEGATIVE):
            raise AttackError("target_class must be +1 or -1")
        if self.threads < 1:
            raise AttackError("threads must be >= 1")

    def k(self, n_train: int) -> int:
        return budget_size(self.budget_fraction, n_train)


@dataclass(frozen=True)
class AttackRound:
    flipped_index: int
    accuracy: float
    f1: float
    candidates_evaluated: int
    retrain_workload: int
    caused_loss: Optional[bool] = None


@dataclass
class AttackTrace:
    strategy: str
    k: int
    clean: Metrics
    rounds: list[AttackRound] = field(default_factory=list)
    wall_time: float = 0.0
    # per training instance, forest score averaged over rounds (Timber/TES only)
    mean_scores: Optional[np.ndarray] = None

    @property
    def flips(self) -> list[int]:
        return [r.flipped_index for r in self.rounds]

    @property
    def total_workload(self) -> int:
        return sum(r.retrain_workload for r in self.rounds)

    def poisoned(self, train: Dataset, n_flips: Optional[int] = None) -> Dataset:
        d = train
        for i in self.flips[: self.k if n_flips is None else n_flips]:
            d = d.flip(i)
        return d

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "strategy": self.strategy,
            "k": self.k,
            "clean": self.clean.to_dict(),
            "rounds": [
                {
                    "round": j + 1,
                    "flipped_index": r.flipped_index,
                    "accuracy": r.accuracy,
                    "f1": r.f1,
                    "candidates_evaluated": r.candidates_evaluated,
                    "retrain_workload": r.retrain_workload,
                    "caused_loss": r.caused_loss,
                }
                for j, r in enumerate(self.rounds)
            ],
            "total_workload": self.total_workload,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "flipped_index", "accuracy", "f1", "workload", "candidates_evaluated"])
        for j, r in enumerate(self.rounds):
            w.writerow([j + 1, r.flipped_index, repr(r.accuracy), repr(r.f1), r.retrain_workload,
                        r.candidates_evaluated])
        return buf.getvalue()


# --- evaluation -----------------------------------------------------------------

class Evaluator:
    """Eval-set predictions with a per-node cache for one base forest.

    Candidate forests produced by flip retraining share most nodes with the
    base forest, so only their rebuilt nodes are predicted afresh.
    """

    def __init__(self, eval_set: Dataset, positive: int = POSITIVE):
        self.X = eval_set.features
        self.y = eval_set.labels
        self.positive = positive
        self._cache: dict[int, tuple[object, np.ndarray]] = {}
        self._masks: dict[tuple[int, float], np.ndarray] = {}

    def set_base(self, forest: Forest) -> None:
        self._cache = {}
        self._masks = {}
        for t in forest.distinct().values():
            self._node_preds(t.root, store=True)

    def _mask(self, f: int, v: float) -> np.ndarray:
        key = (f, v)
        m = self._masks.get(key)
        if m is None:
            m = self.X[:, f] <= v
            self._masks[key] = m
        return m

    def _node_preds(self, node, store: bool = False) -> np.ndarray:
        hit = self._cache.get(id(node))
        if hit is not None and hit[0] is node:
            return hit[1]
        if isinstance(node, Leaf):
            p = np.full(self.X.shape[0], node.label, dtype=np.int8)
        else:
            p = np.where(self._mask(node.split.feature, node.split.threshold),
                         self._node_preds(node.left, store), self._node_preds(node.right, store))
        if store:
            self._cache[id(node)] = (node, p)
        return p

    def predict(self, forest: Forest) -> np.ndarray:
        total = np.zeros(self.X.shape[0], dtype=np.int64)
        per_id: dict[int, np.ndarray] = {}
        for t in forest.trees:
            p = per_id.get(id(t))
            if p is None:
                p = per_id[id(t)] = self._node_preds(t.root)
            total += p
        return np.where(total >= 0, POSITIVE, NEGATIVE)

    def accuracy(self, forest: Forest) -> float:
        return float(np.count_nonzero(self.predict(forest) == self.y)) / self.y.size

    def metrics(self, forest: Forest) -> Metrics:
        return metrics_from_predictions(self.predict(forest), self.y, self.positive)


# --- one greedy round --------------------------------------------------------------

@dataclass(frozen=True)
class RoundResult:
    chosen: int
    accuracy: float
    candidates_evaluated: int
    workload: int
    caused_loss: bool


def greedy_round(candidates: Sequence[int], evaluate: Callable[[int], tuple[float, int]],
                 mode: RoundMode, base_accuracy: float, threads: int = 1,
                 executor: Executor | None = None) -> RoundResult:
    """Pick one flip among ``candidates`` (given in scan order).

    ``evaluate(i)`` returns (eval accuracy after flipping i, retrain workload).
    Candidates are dealt round-robin to ``threads`` workers. In early-stop
    mode the winner is the qualifying candidate with the smallest scan
    position, so the result does not depend on the thread count; the reported
    evaluation count and workload cover the scan prefix up to the winner.
    """
    m = len(candidates)
    if m == 0:
        raise AttackError("no candidates left to flip")
    acc = [None] * m
    work = [0] * m
    found = [m]  # smallest qualifying scan position so far
    lock = threading.Lock()
    early = mode == "early_stop"

    def worker(w: int) -> None:
        for pos in range(w, m, threads):
            if early and pos > found[0]:
                return
            a, wl = evaluate(candidates[pos])
            acc[pos] = a
            work[pos] = wl
            if early and a < base_accuracy:
                with lock:
                    if pos < found[0]:
                        found[0] = pos
                return

    if threads == 1 or executor is None:
        for w in range(threads):
            worker(w)
    else:
        for fut in [executor.submit(worker, w) for w in range(threads)]:
            fut.result()

    if early and found[0] < m:
        p = found[0]
        return RoundResult(int(candidates[p]), acc[p], p + 1, sum(work[: p + 1]), True)
    best = min(range(m), key=lambda p: (acc[p], candidates[p]))
    return RoundResult(int(candidates[best]), acc[best], m, sum(work), acc[best] < base_accuracy)


# --- model-agnostic strategies ----------------------------------------------------------

def _targets(train: Dataset, target_class: int) -> np.ndarray:
    return np.flatnonzero(train.labels == target_class)


def _check_budget(targets: np.ndarray, k: int) -> None:
    if k > targets.size:
        raise AttackError(f"budget {k} exceeds the {targets.size} target-class instances")


def neighborhood_entropies(train: Dataset, n_neighbors: int = 10) -> np.ndarray:
    """Label entropy over each instance's nearest neighbours (self excluded)."""
    D = standardized_distances(train)
    np.fill_diagonal(D, np.inf)
    N = min(n_neighbors, train.n - 1)
    nb = np.argsort(D, axis=1, kind="stable")[:, :N]
    pos = np.count_nonzero(train.labels[nb] == POSITIVE, axis=1)
    return np.array([entropy((int(p), N - int(p))) for p in pos])


def entropy_attack(train: Dataset, k: int, target_class: int = POSITIVE, n_neighbors: int = 10) -> list[int]:
    """Flip the k target-class instances with the most confidently labelled neighbourhoods."""
    targets = _targets(train, target_class)
    _check_budget(targets, k)
    if k == 0:
        return []
    h = neighborhood_entropies(train, n_neighbors)
    order = sorted(targets.tolist(), key=lambda i: (h[i], i))
    return order[:k]


def two_medoids(D: np.ndarray) -> tuple[tuple[int, int], np.ndarray]:
    """2-medoid PAM swap from the farthest pair; returns medoids and cluster ids.

    All-identical points (zero distances everywhere) are split by index
    instead: the first half is cluster 0, the rest cluster 1.
    """
    n = D.shape[0]
    if n < 2:
        raise AttackError("k-medoids needs at least two instances")
    if not D.any():
        cut = n // 2
        return (0, cut), (np.arange(n) >= cut).astype(np.intp)
    flat = int(np.argmax(np.triu(D, 1)))
    m = [flat // n, flat % n]
    cost = float(np.minimum(D[:, m[0]], D[:, m[1]]).sum())
    while True:
        best = (cost, None, None)
        for slot in (0, 1):
            other = D[:, m[1 - slot]]
            costs = np.minimum(D, other[:, None]).sum(axis=0)
            costs[m] = np.inf
            h = int(np.argmin(costs))
            if costs[h] < best[0]:
                best = (float(costs[h]), slot, h)
        if best[1] is None:
            break
        cost, slot, h = best
        m[slot] = h
    m = sorted(m)
    labels = (D[:, m[1]] < D[:, m[0]]).astype(np.intp)
    return (m[0], m[1]), labels


def kmedoids_attack(train: Dataset, k: int, target_class: int = POSITIVE) -> list[int]:
    """Flip the k target-class instances nearest to the medoid of the cluster with fewer targets."""
    targets = _targets(train, target_class)
    _check_budget(targets, k)
    if k == 0:
        return []
    D = standardized_distances(train)
    medoids, labels = two_medoids(D)
    is_target = train.labels == target_class
    counts = [int(np.count_nonzero(is_target & (labels == c))) for c in (0, 1)]
    c = 0 if counts[0] <= counts[1] else 1
    med = medoids[c]
    order = sorted(targets.tolist(), key=lambda i: (D[i, med], i))
    return order[:k]


def random_attack(train: Dataset, k: int, target_class: int = POSITIVE, seed: int = 0) -> list[int]:
    targets = _targets(train, target_class)
    _check_budget(targets, k)
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.permutation(targets)[:k]]


# --- driver -------------------------------------------------------------------------------

def _as_forest_params(model_params) -> ForestParams:
    if isinstance(model_params, ForestParams):
        return model_params
    if isinstance(model_params, TreeParams):
        return ForestParams.single_tree(model_params)
    raise TypeError("model_params must be TreeParams or ForestParams")


def run_attack(model_params, train: Dataset, cfg: AttackConfig, eval_set: Dataset | None = None,
               k: int | None = None) -> AttackTrace:
    """Run ``cfg.strategy`` against a model trained with ``model_params`` on ``train``.

    Accuracy is measured on ``eval_set`` (default ``cfg.eval_set``). ``k``
    overrides the budget derived from ``cfg.budget_fraction``.
    """
    params = _as_forest_params(model_params)
    eval_set = cfg.eval_set if eval_set is None else eval_set
    if eval_set is None:
        raise AttackError("an eval set is required")
    k = cfg.k(train.n) if k is None else int(k)
    targets = _targets(train, cfg.target_class)
    _check_budget(targets, k)
    evaluator = Evaluator(eval_set)
    start = time.perf_counter()
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        model = forest_train(train, params, annotate=cfg.strategy in INCREMENTAL, executor=executor)
        trace = AttackTrace(cfg.strategy, k, evaluator.metrics(model))
        if k == 0:
            return trace
        if cfg.strategy in GREEDY_FAMILY:
            _greedy_attack(trace, model, params, train, targets, cfg, evaluator, executor)
        else:
            if cfg.strategy == "entropy":
                flips = entropy_attack(train, k, cfg.target_class, cfg.entropy_neighbors)
            elif cfg.strategy == "kmedoids":
                flips = kmedoids_attack(train, k, cfg.target_class)
            else:
                flips = random_attack(train, k, cfg.target_class, cfg.seed)
            d = train
            for i in flips:
                d = d.flip(i)
                m = evaluator.metrics(forest_train(d, params, annotate=False, executor=executor))
                trace.rounds.append(AttackRound(int(i), m.accuracy, m.f1, 0, 0))
    finally:
        if executor is not None:
            executor.shutdown()
    trace.wall_time = time.perf_counter() - start
    return trace


def _greedy_attack(trace, model, params, train, targets, cfg, evaluator, executor) -> None:
    incremental = cfg.strategy in INCREMENTAL
    mode: RoundMode = "early_stop" if cfg.strategy in EARLY_STOP else "exhaustive"
    poisoned = train
    flipped: set[int] = set()
    score_sum = np.zeros(train.n) if incremental else None
    for _ in range(trace.k):
        evaluator.set_base(model)
        base_acc = evaluator.accuracy(model)
        candidates = [int(i) for i in targets if int(i) not in flipped]
        if incremental:
            scores = forest_scores(model, poisoned, cfg.score_aggregation)
            score_sum += scores
            if cfg.strategy == "tes":
                candidates.sort(key=lambda i: (scores[i], i))

        if incremental:
            def evaluate(i, model=model, poisoned=poisoned):
                cand = forest_flip_retrain(model, poisoned, i)
                return evaluator.accuracy(cand), cand.workload
        else:
            def evaluate(i, poisoned=poisoned):
                cand = forest_train(poisoned.flip(i), params, annotate=False)
                return evaluator.accuracy(cand), cand.workload

        res = greedy_round(candidates, evaluate, mode, base_acc, cfg.threads, executor)
        flipped.add(res.chosen)
        poisoned = poisoned.flip(res.chosen)
        model = forest_train(poisoned, params, annotate=incremental, executor=executor)
        m = evaluator.metrics(model)
        trace.rounds.append(AttackRound(res.chosen, m.accuracy, m.f1, res.candidates_evaluated,
                                        res.workload, res.caused_loss))
    if incremental:
        trace.mean_scores = score_sum / trace.k
