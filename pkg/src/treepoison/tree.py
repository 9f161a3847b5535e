"""Entropy-based binary decision trees with deterministic split order.

Candidate thresholds are the distinct raw feature values of a node's region,
visited feature-ascending then threshold-ascending; the first split with the
strictly largest gain wins. Every node records the training indices it was
built from, and optionally its stable set (see :mod:`treepoison.annotation`).
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np

from . import _backend
from ._pykernels import gain_from_counts, xlogx_table
from .dataset import NEGATIVE, POSITIVE, Dataset, LabelCounts

TREE_FORMAT = "treepoison.tree"
TREE_FORMAT_VERSION = 1


class StaleAnnotationError(ValueError):
    """The tree's recorded splits do not match what training on the data gives."""


@dataclass(frozen=True, order=True)
class Split:
    feature: int
    threshold: float


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 8
    min_gain: float = 0.0

    def __post_init__(self):
        if int(self.max_depth) < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_gain < 0:
            raise ValueError(f"min_gain must be >= 0, got {self.min_gain}")


@dataclass(frozen=True, eq=False)
class Leaf:
    label: int
    train_set: np.ndarray
    stable_set: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Node:
    split: Split
    left: "TreeNode"
    right: "TreeNode"
    train_set: np.ndarray
    gain: float
    stable_set: Optional[np.ndarray] = None


TreeNode = Union[Leaf, Node]


@dataclass
class TrainStats:
    nodes: int = 0
    instances: int = 0  # sum of |train_set| over every node built
    comparisons: int = 0  # G* triple comparisons made while annotating

    def add(self, other: "TrainStats") -> None:
        self.nodes += other.nodes
        self.instances += other.instances
        self.comparisons += other.comparisons


@dataclass(frozen=True, eq=False)
class DecisionTree:
    root: TreeNode
    params: TreeParams
    n_features: int
    features: Optional[tuple] = None  # feature ids visible to training; None = all
    workload: int = 0  # size of the region (re)trained to produce this tree
    retrained_at: Optional[int] = None  # depth of the retrained node, for flip results
    stats: TrainStats = field(default_factory=TrainStats)

    @property
    def annotated(self) -> bool:
        return self.root.stable_set is not None

    @property
    def n_train(self) -> int:
        return int(self.root.train_set.size)

    def feature_ids(self) -> np.ndarray:
        if self.features is None:
            return np.arange(self.n_features, dtype=np.intp)
        return np.asarray(self.features, dtype=np.intp)

    def nodes(self) -> Iterator[tuple[int, TreeNode]]:
        """Pre-order (depth, node) pairs."""
        stack = [(0, self.root)]
        while stack:
            depth, node = stack.pop()
            yield depth, node
            if isinstance(node, Node):
                stack.append((depth + 1, node.right))
                stack.append((depth + 1, node.left))

    def depth(self) -> int:
        return max(d for d, n in self.nodes() if isinstance(n, Leaf))


# --- shared numeric state -------------------------------------------------

_table_lock = threading.Lock()
_table = xlogx_table(1024)


def log_table(n: int) -> np.ndarray:
    global _table
    if _table.size <= n:
        with _table_lock:
            if _table.size <= n:
                _table = xlogx_table(max(n, 2 * _table.size))
    return _table


class _PresortCache:
    """Root presorts keyed by (features array, region, visible features).

    Feature orderings are label independent, so every candidate flip of a
    greedy round reuses the same root presort.
    """

    def __init__(self, size: int = 16):
        self.size = size
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, X: np.ndarray, region: np.ndarray, feats: np.ndarray) -> np.ndarray:
        key = (id(X), hashlib.blake2b(region.tobytes(), digest_size=16).digest(), feats.tobytes())
        with self._lock:
            hit = self._data.get(key)
            if hit is not None and hit[0] is X:
                self._data.move_to_end(key)
                return hit[1]
        order = np.argsort(X[np.ix_(region, feats)], axis=0, kind="stable")
        S = np.ascontiguousarray(region[order].T)
        S.setflags(write=False)
        with self._lock:
            self._data[key] = (X, S)
            while len(self._data) > self.size:
                self._data.popitem(last=False)
        return S


_presorts = _PresortCache()


def _as_region(d: Dataset, region) -> np.ndarray:
    if region is None:
        return np.arange(d.n, dtype=np.intp)
    r = np.unique(np.asarray(region, dtype=np.intp))
    if r.size and (r[0] < 0 or r[-1] >= d.n):
        raise IndexError("region index out of range")
    return r


# --- elementary quantities --------------------------------------------------

def entropy(c: LabelCounts) -> float:
    p, q = int(c[0]), int(c[1])
    t = p + q
    if t <= 0:
        raise ValueError("entropy of an empty set is undefined")
    L = log_table(t)
    return float((L[t] - (L[p] + L[q])) / t)


def candidate_splits(d: Dataset, region=None, features=None) -> list[Split]:
    """All (feature, distinct value) pairs of the region, lexicographically sorted."""
    r = _as_region(d, region)
    feats = range(d.d) if features is None else sorted(features)
    out = []
    for f in feats:
        for v in np.unique(d.features[r, f]):
            out.append(Split(int(f), float(v)))
    return out


def split_counts(d: Dataset, region, s: Split) -> tuple[int, int, int, int]:
    """(left+, left-, right+, right-) for the effective labels of a region."""
    r = _as_region(d, region)
    left = d.features[r, s.feature] <= s.threshold
    pos = d.labels[r] == POSITIVE
    lp = int(np.count_nonzero(left & pos))
    ln = int(np.count_nonzero(left)) - lp
    rp = int(np.count_nonzero(pos)) - lp
    rn = int(r.size) - lp - ln - rp
    return lp, ln, rp, rn


def information_gain(d: Dataset, region, s: Split) -> float:
    counts = split_counts(d, region, s)
    if sum(counts) == 0:
        raise ValueError("information gain of an empty region is undefined")
    return gain_from_counts(*counts, log_table(sum(counts)))


# --- training ---------------------------------------------------------------

def _leaf_label(y: np.ndarray, region: np.ndarray) -> int:
    pos = int(np.count_nonzero(y[region] == POSITIVE))
    return POSITIVE if pos >= region.size - pos else NEGATIVE


def grow(X, y, S, region, depth, params: TreeParams, feats, annotate: bool, stats: TrainStats) -> TreeNode:
    """Greedy top-down growth on a presorted region; ``depth`` is the depth of the node built here."""
    k = _backend.kernels
    L = log_table(X.shape[0])
    stats.nodes += 1
    stats.instances += int(region.size)
    row = -1
    if depth < params.max_depth and region.size >= 2:
        row, v, g, *_ = k.best_split(X, y, S, feats, params.min_gain, L)
    if row < 0:
        return Leaf(_leaf_label(y, region), region, region if annotate else None)
    f = int(feats[row])
    stable = None
    if annotate:
        stable, comps = k.stable_indices(X, y, S, feats, row, v, params.min_gain, L, region)
        stats.comparisons += int(comps)
    S_left, S_right = k.partition(X, S, f, v)
    on_left = X[region, f] <= v
    left = grow(X, y, S_left, region[on_left], depth + 1, params, feats, annotate, stats)
    right = grow(X, y, S_right, region[~on_left], depth + 1, params, feats, annotate, stats)
    return Node(Split(f, float(v)), left, right, region, float(g), stable)


def _feats(d: Dataset, features) -> np.ndarray:
    if features is None:
        return np.arange(d.d, dtype=np.intp)
    feats = np.unique(np.asarray(features, dtype=np.intp))
    if feats.size == 0:
        raise ValueError("no features to split on")
    if feats[0] < 0 or feats[-1] >= d.d:
        raise IndexError("feature id out of range")
    return feats


def train_region(d: Dataset, region: np.ndarray, params: TreeParams, feats: np.ndarray,
                 depth: int = 0, annotate: bool = False, labels=None) -> tuple[TreeNode, TrainStats]:
    X = d.features
    y = d.labels if labels is None else labels
    if region.size >= 64:
        S = _presorts.get(X, region, feats)
    else:
        order = np.argsort(X[np.ix_(region, feats)], axis=0, kind="stable")
        S = np.ascontiguousarray(region[order].T)
    stats = TrainStats()
    return grow(X, y, S, region, depth, params, feats, annotate, stats), stats


def tree_train(d: Dataset, region=None, params: TreeParams = TreeParams(), *,
               features=None, annotate: bool = False) -> DecisionTree:
    """Train a tree on ``region`` (default: all rows) of ``d`` using effective labels.

    With ``annotate=True`` stable sets are computed during the same pass,
    giving the same result as ``annotate(tree_train(...), d)``.
    """
    r = _as_region(d, region)
    if r.size == 0:
        raise ValueError("cannot train on an empty region")
    feats = _feats(d, features)
    root, stats = train_region(d, r, params, feats, annotate=annotate)
    return DecisionTree(
        root=root,
        params=params,
        n_features=d.d,
        features=None if features is None else tuple(int(f) for f in feats),
        workload=int(r.size),
        stats=stats,
    )


# --- prediction -------------------------------------------------------------

def predict(t: DecisionTree | TreeNode, x) -> int:
    node = t.root if isinstance(t, DecisionTree) else t
    while isinstance(node, Node):
        node = node.left if x[node.split.feature] <= node.split.threshold else node.right
    return node.label


def predict_many(t: DecisionTree | TreeNode, X: np.ndarray) -> np.ndarray:
    node = t.root if isinstance(t, DecisionTree) else t
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.int8)

    def walk(n, rows):
        if rows.size == 0:
            return
        if isinstance(n, Leaf):
            out[rows] = n.label
            return
        go_left = X[rows, n.split.feature] <= n.split.threshold
        walk(n.left, rows[go_left])
        walk(n.right, rows[~go_left])

    walk(node, np.arange(X.shape[0]))
    return out


# --- structure and serialization ---------------------------------------------

def signature(node: TreeNode, stable: bool = True):
    """Nested-tuple fingerprint of a (sub)tree for structural equality."""
    st = (lambda n: None if n.stable_set is None else n.stable_set.tobytes()) if stable else (lambda n: None)
    if isinstance(node, Leaf):
        return ("leaf", node.label, node.train_set.tobytes(), st(node))
    return ("node", node.split.feature, node.split.threshold, node.gain,
            node.train_set.tobytes(), st(node),
            signature(node.left, stable), signature(node.right, stable))


def same_structure(a: DecisionTree | TreeNode, b: DecisionTree | TreeNode, stable: bool = True) -> bool:
    ra = a.root if isinstance(a, DecisionTree) else a
    rb = b.root if isinstance(b, DecisionTree) else b
    return signature(ra, stable) == signature(rb, stable)


def _node_dict(n: TreeNode) -> dict:
    stable = None if n.stable_set is None else n.stable_set.tolist()
    if isinstance(n, Leaf):
        return {"type": "leaf", "label": int(n.label), "train_set": n.train_set.tolist(), "stable_set": stable}
    return {
        "type": "node",
        "feature": n.split.feature,
        "threshold": n.split.threshold,
        "gain": n.gain,
        "train_set": n.train_set.tolist(),
        "stable_set": stable,
        "left": _node_dict(n.left),
        "right": _node_dict(n.right),
    }


def _node_from(obj: dict) -> TreeNode:
    train = np.asarray(obj["train_set"], dtype=np.intp)
    stable = None if obj.get("stable_set") is None else np.asarray(obj["stable_set"], dtype=np.intp)
    if obj["type"] == "leaf":
        if stable is not None and np.array_equal(stable, train):
            stable = train
        return Leaf(int(obj["label"]), train, stable)
    return Node(Split(int(obj["feature"]), float(obj["threshold"])),
                _node_from(obj["left"]), _node_from(obj["right"]),
                train, float(obj["gain"]), stable)


def tree_to_dict(t: DecisionTree) -> dict:
    return {
        "format": TREE_FORMAT,
        "version": TREE_FORMAT_VERSION,
        "params": {"max_depth": t.params.max_depth, "min_gain": t.params.min_gain},
        "n_features": t.n_features,
        "features": None if t.features is None else list(t.features),
        "root": _node_dict(t.root),
    }


def tree_from_dict(obj: dict) -> DecisionTree:
    if obj.get("format") != TREE_FORMAT or obj.get("version") != TREE_FORMAT_VERSION:
        raise ValueError("not a version-1 treepoison tree")
    root = _node_from(obj["root"])
    return DecisionTree(
        root=root,
        params=TreeParams(**obj["params"]),
        n_features=int(obj["n_features"]),
        features=None if obj["features"] is None else tuple(obj["features"]),
        workload=int(root.train_set.size),
    )


def dumps(t: DecisionTree) -> str:
    return json.dumps(tree_to_dict(t))


def loads(text: str) -> DecisionTree:
    return tree_from_dict(json.loads(text))
