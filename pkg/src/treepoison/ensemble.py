"""Random forests without bootstrap: independent annotated trees, hard majority vote.

Without feature subsampling every tree is trained on the same rows with the
same deterministic algorithm, so all trees are identical. The forest then
holds one tree object ``n_trees`` times. Per-tree work runs once per distinct
object, but workload counters still count every tree.
"""

from __future__ import annotations

import json
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .annotation import flip_retrain, instance_score, retrain_region_size, retrain_region_sizes
from .dataset import NEGATIVE, POSITIVE, Dataset
from .tree import DecisionTree, TreeParams, predict, predict_many, tree_from_dict, tree_to_dict, tree_train

ScoreAggregation = Literal["mean", "max"]

FOREST_FORMAT = "treepoison.forest"
FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 5
    tree_params: TreeParams = field(default_factory=TreeParams)
    feature_subsample: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.feature_subsample is not None and not 0 < self.feature_subsample <= 1:
            raise ValueError(f"feature_subsample must be in (0, 1], got {self.feature_subsample}")

    @classmethod
    def single_tree(cls, tree_params: TreeParams) -> "ForestParams":
        return cls(n_trees=1, tree_params=tree_params)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.tree_params.max_depth,
            "min_gain": self.tree_params.min_gain,
            "feature_subsample": self.feature_subsample,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ForestParams":
        return cls(
            n_trees=int(obj["n_trees"]),
            tree_params=TreeParams(int(obj["max_depth"]), float(obj.get("min_gain", 0.0))),
            feature_subsample=obj.get("feature_subsample"),
            seed=int(obj.get("seed", 0)),
        )


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    params: ForestParams
    workload: int = 0

    def distinct(self) -> dict[int, DecisionTree]:
        return {id(t): t for t in self.trees}

    @property
    def n_train(self) -> int:
        return self.trees[0].n_train


def feature_subsets(params: ForestParams, d_features: int) -> list[Optional[tuple]]:
    if params.feature_subsample is None:
        return [None] * params.n_trees
    m = int(np.floor(params.feature_subsample * d_features + 0.5))
    if m == 0:
        raise ValueError(f"feature_subsample {params.feature_subsample} keeps no features of {d_features}")
    out = []
    for i in range(params.n_trees):
        rng = np.random.default_rng([params.seed, i])
        out.append(tuple(sorted(int(f) for f in rng.choice(d_features, size=m, replace=False))))
    return out


def _map(executor: Executor | None, fn, items):
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def forest_train(d: Dataset, params: ForestParams, *, annotate: bool = True,
                 executor: Executor | None = None, cache: dict | None = None) -> Forest:
    """Train ``params.n_trees`` trees on all of ``d``.

    ``cache`` maps (feature subset, tree params, annotate) to trained trees;
    callers that train many forests on the same dataset can share one.
    """
    if d.n == 0:
        raise ValueError("cannot train on an empty dataset")
    subsets = feature_subsets(params, d.d)
    tp = params.tree_params
    cache = {} if cache is None else cache
    todo = [s for s in dict.fromkeys(subsets) if (s, tp, annotate) not in cache]
    trained = _map(executor, lambda s: tree_train(d, None, tp, features=s, annotate=annotate), todo)
    cache.update({(s, tp, annotate): t for s, t in zip(todo, trained)})
    by_subset = {s: cache[(s, tp, annotate)] for s in subsets}
    trees = tuple(by_subset[s] for s in subsets)
    return Forest(trees, params, workload=sum(t.workload for t in trees))


def vote(labels) -> int:
    """Hard majority vote over +1/-1 labels; a tie goes to +1."""
    s = int(np.sum(labels))
    return POSITIVE if s >= 0 else NEGATIVE


def forest_predict(f: Forest, x) -> int:
    return vote([predict(t, x) for t in f.trees])


def forest_predict_many(f: Forest, X: np.ndarray) -> np.ndarray:
    cache: dict[int, np.ndarray] = {}
    total = np.zeros(np.asarray(X).shape[0], dtype=np.int64)
    for t in f.trees:
        p = cache.get(id(t))
        if p is None:
            p = cache[id(t)] = predict_many(t, X)
        total += p
    return np.where(total >= 0, POSITIVE, NEGATIVE).astype(np.int8)


def forest_flip_retrain(f: Forest, d: Dataset, flip_index: int, params: ForestParams | None = None,
                        *, executor: Executor | None = None) -> Forest:
    """Flip-retrain every tree; ``workload`` is the summed retrained-region size."""
    params = f.params if params is None else params
    distinct = f.distinct()
    keys = list(distinct)
    new = _map(executor, lambda k: flip_retrain(distinct[k], d, flip_index, params.tree_params), keys)
    by_id = dict(zip(keys, new))
    trees = tuple(by_id[id(t)] for t in f.trees)
    return Forest(trees, params, workload=sum(t.workload for t in trees))


def _aggregate(sizes, n_train: int, agg: ScoreAggregation):
    # region sizes are integers: summing them before the one division keeps
    # the mean of identical trees exactly equal to their common score
    if agg == "mean":
        return np.sum(sizes, axis=0) / (len(sizes) * n_train)
    if agg == "max":
        return np.max(sizes, axis=0) / n_train
    raise ValueError(f"unknown score aggregation {agg!r}")


def forest_score(f: Forest, index: int, agg: ScoreAggregation = "mean") -> float:
    per_id = {}
    for k, t in f.distinct().items():
        instance_score(t, index)  # validates annotation and membership
        per_id[k] = retrain_region_size(t, int(index))
    return float(_aggregate([per_id[id(t)] for t in f.trees], f.n_train, agg))


def forest_scores(f: Forest, d: Dataset, agg: ScoreAggregation = "mean") -> np.ndarray:
    """Aggregated scores for every row of ``d``."""
    per_id = {k: retrain_region_sizes(t, d) for k, t in f.distinct().items()}
    return _aggregate(np.stack([per_id[id(t)] for t in f.trees]), f.n_train, agg)


def forest_to_dict(f: Forest) -> dict:
    return {
        "format": FOREST_FORMAT,
        "version": FOREST_FORMAT_VERSION,
        "params": f.params.to_dict(),
        "trees": [tree_to_dict(t) for t in f.trees],
    }


def forest_from_dict(obj: dict) -> Forest:
    if obj.get("format") != FOREST_FORMAT or obj.get("version") != FOREST_FORMAT_VERSION:
        raise ValueError("not a version-1 treepoison forest")
    trees = tuple(tree_from_dict(t) for t in obj["trees"])
    return Forest(trees, ForestParams.from_dict(obj["params"]), workload=sum(t.workload for t in trees))


def dumps(f: Forest) -> str:
    return json.dumps(forest_to_dict(f))


def loads(text: str) -> Forest:
    return forest_from_dict(json.loads(text))
