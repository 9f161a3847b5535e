"""Training-time defenses: kNN label sanitization and hash-partitioned bagging."""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .dataset import NEGATIVE, POSITIVE, Dataset, standardized_distances
from .ensemble import ForestParams, forest_predict, forest_predict_many, forest_train

HASH_SCHEME = "splitmix64-v1"

KNN_GRID = {"N": (4, 8, 12), "eta": (0.6, 0.75, 0.9), "M": (1, 3, 5)}
BAGGING_GRID = {"G": tuple(range(5, 41, 5)), "K": (0.20, 0.10, 0.05, 0.025)}


@dataclass(frozen=True)
class KnnDefenseParams:
    N: int = 8
    eta: float = 0.75
    M: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")
        if self.M < 1:
            raise ValueError("M must be >= 1")


@dataclass(frozen=True)
class BaggingDefenseParams:
    G: int = 10
    K: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.G < 1:
            raise ValueError("G must be >= 1")
        if not 0 < self.K <= 1:
            raise ValueError("K must be in (0, 1]")


def knn_sanitize(d: Dataset, p: KnnDefenseParams) -> Dataset:
    """Relabel instances whose N nearest neighbours hold a strict-majority label above eta.

    Each of the M passes decides every relabel from the labels at the start of
    the pass and applies them together; a pass that changes nothing ends the
    loop early. Distances are Euclidean on standardized features.
    """
    if p.N >= d.n:
        raise ValueError(f"N={p.N} needs more than {d.n} instances")
    D = standardized_distances(d)
    np.fill_diagonal(D, np.inf)
    nb = np.argsort(D, axis=1, kind="stable")[:, : p.N]
    y = d.labels.copy()
    for _ in range(p.M):
        pos_frac = np.count_nonzero(y[nb] == POSITIVE, axis=1) / p.N
        new = y.copy()
        neg_frac = 1.0 - pos_frac
        new[(pos_frac > neg_frac) & (pos_frac > p.eta)] = POSITIVE
        new[(neg_frac > pos_frac) & (neg_frac > p.eta)] = NEGATIVE
        if np.array_equal(new, y):
            break
        y = new
    return d.with_labels(y)


_MASK64 = (1 << 64) - 1


_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    """One splitmix64 step: add the golden gamma, then the finalizer."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def hash64(seed: int, g: int, index: int) -> int:
    """Chained splitmix64: mix(mix(mix(seed) ^ g) ^ index), all mod 2**64."""
    return _mix(_mix(_mix(seed & _MASK64) ^ (g & _MASK64)) ^ (index & _MASK64))


def _hash64_many(seed: int, g: int, n: int) -> np.ndarray:
    """``hash64(seed, g, i)`` for i in range(n), as uint64."""
    z = np.uint64(_mix(_mix(seed & _MASK64) ^ (g & _MASK64))) ^ np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def subset_size(K: float, n: int) -> int:
    return int(np.floor(K * n + 0.5))


def hash_subsets(n: int, p: BaggingDefenseParams) -> list[np.ndarray]:
    """Subsets g = 1..G of size round(K n): the instances with the smallest hash64(seed, g, i)."""
    size = subset_size(p.K, n)
    if size < 1:
        raise ValueError(f"K={p.K} gives an empty subset of {n} instances")
    out = []
    for g in range(1, p.G + 1):
        h = _hash64_many(p.seed, g, n)
        order = np.lexsort((np.arange(n), h))
        out.append(np.sort(order[:size]))
    return out


@dataclass(frozen=True, eq=False)
class BaggedModel:
    members: tuple
    subsets: tuple
    params: BaggingDefenseParams

    def predict(self, x) -> int:
        return bagged_predict(self, x)

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        total = sum(forest_predict_many(m, X).astype(np.int64) for m in self.members)
        return np.where(total >= 0, POSITIVE, NEGATIVE).astype(np.int8)


def hash_bagging_train(d: Dataset, p: BaggingDefenseParams, base_params: ForestParams,
                       executor: Executor | None = None) -> BaggedModel:
    subsets = hash_subsets(d.n, p)
    if len(subsets[0]) < 2:
        raise ValueError("bagging subsets need at least two instances")

    def fit(idx):
        return forest_train(d.subset(idx), base_params, annotate=False)

    members = [fit(s) for s in subsets] if executor is None else list(executor.map(fit, subsets))
    return BaggedModel(tuple(members), tuple(subsets), p)


def bagged_predict(m: BaggedModel, x) -> int:
    s = sum(forest_predict(f, x) for f in m.members)
    return POSITIVE if s >= 0 else NEGATIVE
