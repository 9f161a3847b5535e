"""Stable-instance annotation, sub-tree flip retraining and instance scores.

An instance is *stable* at an internal node when flipping its label alone
leaves that node's chosen split unchanged. Because split candidates depend on
features only, a flip of a stable instance cannot alter anything above or
beside the child it falls into, so retraining can restart at the first node
on its path where it is not stable.

On top of the competitor test, an instance is also unstable when its flip
pushes the chosen split's own gain down to ``min_gain`` or lower: training
would then emit a leaf, so the node's decision does change.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from . import _backend
from .dataset import NEGATIVE, POSITIVE, Dataset
from .tree import (
    DecisionTree,
    Leaf,
    Node,
    Split,
    StaleAnnotationError,
    TrainStats,
    TreeNode,
    TreeParams,
    gain_from_counts,
    log_table,
    split_counts,
    train_region,
)

Side = Literal["<=", ">"]


@dataclass(frozen=True)
class GainTriple:
    gain: float
    side: Side
    flipped_class: int


def gain_triples(d: Dataset, region, s: Split) -> list[GainTriple]:
    """Post-flip gains of ``s`` for every feasible (side, class) flip, at most four."""
    lp, ln, rp, rn = split_counts(d, region, s)
    L = log_table(lp + ln + rp + rn)
    out = []
    if lp:
        out.append(GainTriple(gain_from_counts(lp - 1, ln + 1, rp, rn, L), "<=", POSITIVE))
    if ln:
        out.append(GainTriple(gain_from_counts(lp + 1, ln - 1, rp, rn, L), "<=", NEGATIVE))
    if rp:
        out.append(GainTriple(gain_from_counts(lp, ln, rp - 1, rn + 1, L), ">", POSITIVE))
    if rn:
        out.append(GainTriple(gain_from_counts(lp, ln, rp + 1, rn - 1, L), ">", NEGATIVE))
    return out


def _contains(sorted_arr: np.ndarray, i: int) -> bool:
    j = np.searchsorted(sorted_arr, i)
    return bool(j < sorted_arr.size and sorted_arr[j] == i)


def is_stable(node: TreeNode, index: int) -> bool:
    if node.stable_set is None:
        raise ValueError("tree is not annotated")
    return _contains(node.stable_set, index)


def annotate(t: DecisionTree, d: Dataset) -> DecisionTree:
    """Recompute every node's stable set against ``d``.

    Raises :class:`StaleAnnotationError` if ``t`` is not what training on
    ``d`` produces (a different split, or a leaf that should have split).
    """
    X, y = d.features, d.labels
    feats = t.feature_ids()
    k = _backend.kernels
    L = log_table(X.shape[0])
    stats = TrainStats()
    root_region = t.root.train_set
    if root_region.size and root_region[-1] >= d.n:
        raise StaleAnnotationError("tree indexes rows the dataset does not have")
    order = np.argsort(X[np.ix_(root_region, feats)], axis=0, kind="stable")
    S0 = np.ascontiguousarray(root_region[order].T)

    def walk(node: TreeNode, S: np.ndarray, depth: int) -> TreeNode:
        region = node.train_set
        stats.nodes += 1
        stats.instances += int(region.size)
        row = -1
        if depth < t.params.max_depth and region.size >= 2:
            row, v, g, *_ = k.best_split(X, y, S, feats, t.params.min_gain, L)
        if isinstance(node, Leaf):
            if row >= 0:
                raise StaleAnnotationError(f"leaf at depth {depth} should split on the data given")
            return replace(node, stable_set=node.train_set)
        if row < 0 or int(feats[row]) != node.split.feature or v != node.split.threshold:
            raise StaleAnnotationError(f"split {node.split} at depth {depth} does not match the data given")
        stable, comps = k.stable_indices(X, y, S, feats, row, v, t.params.min_gain, L, region)
        stats.comparisons += int(comps)
        S_left, S_right = k.partition(X, S, node.split.feature, v)
        if S_left.shape[1] != node.left.train_set.size:
            raise StaleAnnotationError("child train sets do not match the split")
        return replace(node, left=walk(node.left, S_left, depth + 1),
                       right=walk(node.right, S_right, depth + 1), stable_set=stable)

    return replace(t, root=walk(t.root, S0, 0), stats=stats)


def flip_retrain(t: DecisionTree, d: Dataset, flip_index: int, params: TreeParams | None = None) -> DecisionTree:
    """Tree for ``d`` with ``flip_index`` flipped, retraining only the affected sub-tree.

    ``d`` is the dataset ``t`` was trained and annotated on. Off-path
    sub-trees are shared by reference with ``t``. ``workload`` on the result
    is the size of the retrained region; ``retrained_at`` is its depth.
    """
    if not t.annotated:
        raise ValueError("flip_retrain needs an annotated tree")
    params = t.params if params is None else params
    i = int(flip_index)
    if not _contains(t.root.train_set, i):
        raise ValueError(f"instance {i} is not in the tree's training set")
    x = d.features[i]
    path: list[tuple[Node, bool]] = []
    node = t.root
    while isinstance(node, Node) and _contains(node.stable_set, i):
        went_left = bool(x[node.split.feature] <= node.split.threshold)
        path.append((node, went_left))
        node = node.left if went_left else node.right
    depth = len(path)
    flipped = d.flip(i)
    new, stats = train_region(flipped, node.train_set, params, t.feature_ids(),
                              depth=depth, annotate=True)
    L = log_table(d.n)
    for parent, went_left in reversed(path):
        # the split survives the flip but its gain moves
        gain = gain_from_counts(*split_counts(flipped, parent.train_set, parent.split), L)
        child = {"left": new} if went_left else {"right": new}
        new = replace(parent, gain=gain, **child)
    return replace(t, root=new, params=params, workload=int(node.train_set.size),
                   retrained_at=depth, stats=stats)


def instance_score(t: DecisionTree, index: int) -> float:
    """Fraction of the training set held by the node that a flip of ``index`` retrains."""
    if not t.annotated:
        raise ValueError("instance_score needs an annotated tree")
    i = int(index)
    if not _contains(t.root.train_set, i):
        raise ValueError(f"instance {i} is not in the tree's training set")
    return retrain_region_size(t, i, x=None) / t.n_train


def retrain_region_size(t: DecisionTree, index: int, x=None) -> int:
    node = t.root
    while isinstance(node, Node):
        if not _contains(node.stable_set, index):
            return int(node.train_set.size)
        if x is None:
            # walk by membership, which needs no feature vector
            node = node.left if _contains(node.left.train_set, index) else node.right
        else:
            node = node.left if x[node.split.feature] <= node.split.threshold else node.right
    return int(node.train_set.size)


def retrain_region_sizes(t: DecisionTree, d: Dataset) -> np.ndarray:
    """Retrained-region size for every row of ``d`` (NaN for rows outside the tree's training set)."""
    out = np.full(d.n, np.nan)
    for i in t.root.train_set:
        out[i] = retrain_region_size(t, int(i), d.features[i])
    return out


def instance_scores(t: DecisionTree, d: Dataset) -> np.ndarray:
    """Scores of every row of ``d`` (NaN for rows outside the tree's training set)."""
    return retrain_region_sizes(t, d) / t.n_train


def annotation_dump(t: DecisionTree) -> str:
    """One line per node: depth, kind, |train_set|, |stable_set|."""
    lines = ["depth,kind,train_size,stable_size"]
    for depth, node in t.nodes():
        kind = "leaf" if isinstance(node, Leaf) else "node"
        stable = "" if node.stable_set is None else str(node.stable_set.size)
        lines.append(f"{depth},{kind},{node.train_set.size},{stable}")
    return "\n".join(lines) + "\n"
