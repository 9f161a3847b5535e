"""Brute-force oracle suites behind ``treepoison verify``.

Each suite draws small random datasets and checks an optimized routine
against a slow reference: flip retraining against full retraining, stable
sets against per-instance flip-and-resplit, gain triples against direct
recomputation, Timber against Greedy, and the compiled kernels against the
numpy fallback.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _backend
from .annotation import flip_retrain, gain_triples
from .attacks import AttackConfig, run_attack
from .dataset import POSITIVE, Dataset
from .ensemble import ForestParams
from .tree import Node, TreeParams, candidate_splits, same_structure, signature, tree_train

DEFAULT_CASES = 50


@dataclass
class SuiteResult:
    name: str
    passed: int
    total: int
    seconds: float
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def line(self) -> str:
        status = "ok" if self.ok else "FAIL"
        tail = f"  first failure: {self.failure}" if self.failure else ""
        return f"{self.name:<14} {self.passed:>7}/{self.total:<7} {status:<4} {self.seconds:6.1f}s{tail}"


def random_dataset(rng: np.random.Generator, n: int, d: int, *, ties: bool = False) -> Dataset:
    """Noisy linearly labelled data; ``ties`` draws features from a few integer levels."""
    X = rng.integers(0, 4, size=(n, d)).astype(float) if ties else rng.normal(size=(n, d))
    y = np.where(X @ rng.normal(size=d) + rng.normal(scale=0.7, size=n) > 0, 1, -1)
    if np.all(y == y[0]):
        y[0] = -y[0]
    return Dataset(X, y)


# --- brute-force references ------------------------------------------------------------------

def _xlogx(k: int) -> float:
    return 0.0 if k == 0 else k * math.log2(k)


def _entropy(p: int, q: int) -> float:
    t = p + q
    return -sum((c / t) * math.log2(c / t) for c in (p, q) if c)


def _gain(y: np.ndarray, left: np.ndarray) -> float:
    """Textbook information gain of the boolean partition ``left`` of labels ``y``."""
    n = y.size
    yl, yr = y[left], y[~left]
    if yl.size == 0 or yr.size == 0:
        return 0.0
    h = lambda a: _entropy(int(np.count_nonzero(a == POSITIVE)), int(np.count_nonzero(a != POSITIVE)))
    return h(y) - yl.size / n * h(yl) - yr.size / n * h(yr)


def _best(X: np.ndarray, y: np.ndarray, region: np.ndarray, min_gain: float) -> Optional[tuple]:
    """Lexicographically first maximal-gain split over the region, by exhaustive count tables."""
    best, best_g = None, min_gain
    yr = y[region]
    L = [_xlogx(k) for k in range(region.size + 1)]
    for f in range(X.shape[1]):
        x = X[region, f]
        for v in np.unique(x):
            m = x <= v
            lp = int(np.count_nonzero(yr[m] == POSITIVE))
            ln = int(np.count_nonzero(m)) - lp
            rp = int(np.count_nonzero(yr == POSITIVE)) - lp
            rn = int(region.size) - lp - ln - rp
            nl, nr, n = lp + ln, rp + rn, region.size
            if nl == 0 or nr == 0:
                continue
            g = ((L[n] - (L[lp + rp] + L[ln + rn]))
                 - ((L[nl] - (L[lp] + L[ln])) + (L[nr] - (L[rp] + L[rn])))) / n
            if g < 1e-12:
                g = 0.0
            if g > best_g:
                best, best_g = (f, float(v)), g
    return best


# --- suites ------------------------------------------------------------------------------------

def _run(name: str, body: Callable[[Callable[[bool, str], None]], None]) -> SuiteResult:
    res = SuiteResult(name, 0, 0, 0.0)
    start = time.perf_counter()

    def check(ok: bool, what: str) -> None:
        res.total += 1
        if ok:
            res.passed += 1
        elif res.failure is None:
            res.failure = what

    body(check)
    res.seconds = time.perf_counter() - start
    return res


def suite_flip_retrain(rng, cases: int) -> SuiteResult:
    def body(check):
        for c in range(cases):
            d = random_dataset(rng, int(rng.integers(20, 80)), int(rng.integers(2, 5)), ties=c % 3 == 2)
            p = TreeParams(int(rng.integers(1, 6)))
            t = tree_train(d, None, p, annotate=True)
            for i in range(d.n):
                full = tree_train(d.flip(i), None, p)
                check(same_structure(flip_retrain(t, d, i), full, stable=False), f"case {c}, flip {i}")
    return _run("flip_retrain", body)


def suite_stability(rng, cases: int) -> SuiteResult:
    def body(check):
        for c in range(cases):
            d = random_dataset(rng, int(rng.integers(15, 50)), int(rng.integers(2, 4)), ties=c % 2 == 1)
            p = TreeParams(int(rng.integers(1, 5)))
            t = tree_train(d, None, p, annotate=True)
            y = d.labels
            for depth, node in t.nodes():
                if not isinstance(node, Node):
                    continue
                stable = set(node.stable_set.tolist())
                for i in node.train_set.tolist():
                    y2 = y.copy()
                    y2[i] = -y2[i]
                    b = _best(d.features, y2, node.train_set, p.min_gain)
                    keeps = b == (node.split.feature, node.split.threshold)
                    check(keeps == (i in stable), f"case {c}, depth {depth}, instance {i}")
    return _run("stability", body)


def suite_gain_triples(rng, cases: int) -> SuiteResult:
    def body(check):
        for c in range(cases):
            d = random_dataset(rng, int(rng.integers(5, 40)), int(rng.integers(1, 4)), ties=c % 2 == 1)
            region = np.flatnonzero(rng.random(d.n) < 0.7)
            if region.size < 2:
                continue
            y = d.labels[region]
            for s in candidate_splits(d, region):
                left = d.features[region, s.feature] <= s.threshold
                want = {}
                for side, mask in (("<=", left), (">", ~left)):
                    for cls in (POSITIVE, -POSITIVE):
                        hits = np.flatnonzero(mask & (y == cls))
                        if hits.size:
                            y2 = y.copy()
                            y2[hits[0]] = -cls
                            want[(side, cls)] = _gain(y2, left)
                got = {(g.side, g.flipped_class): g.gain for g in gain_triples(d, region, s)}
                ok = got.keys() == want.keys() and all(abs(got[k] - want[k]) <= 1e-12 for k in want)
                check(ok, f"case {c}, split {s}")
    return _run("gain_triples", body)


def suite_timber_greedy(rng, cases: int) -> SuiteResult:
    def body(check):
        for c in range(cases):
            train = random_dataset(rng, int(rng.integers(30, 70)), int(rng.integers(2, 5)), ties=c % 3 == 2)
            test = random_dataset(rng, 30, train.d)
            fp = ForestParams(int(rng.integers(1, 4)), TreeParams(int(rng.integers(2, 5))),
                              feature_subsample=None if c % 2 else 0.7, seed=c)
            k = int(min(rng.integers(1, 6), np.count_nonzero(train.labels == POSITIVE)))
            a = run_attack(fp, train, AttackConfig("timber"), eval_set=test, k=k)
            b = run_attack(fp, train, AttackConfig("greedy"), eval_set=test, k=k)
            same = a.flips == b.flips and [r.accuracy for r in a.rounds] == [r.accuracy for r in b.rounds]
            check(same, f"case {c}")
    return _run("timber_greedy", body)


def suite_backends(rng, cases: int) -> SuiteResult:
    def body(check):
        if "cython" not in _backend.available():
            return
        for c in range(cases):
            d = random_dataset(rng, int(rng.integers(20, 150)), int(rng.integers(2, 6)), ties=c % 2 == 1)
            p = TreeParams(int(rng.integers(1, 8)))
            sigs = []
            for name in ("python", "cython"):
                with _backend.using(name):
                    sigs.append(signature(tree_train(d, None, p, annotate=True).root))
            check(sigs[0] == sigs[1], f"case {c}")
    return _run("backends", body)


SUITES = (suite_flip_retrain, suite_stability, suite_gain_triples, suite_timber_greedy, suite_backends)


def run_all(seed: int = 0, cases: int | None = None) -> list[SuiteResult]:
    cases = DEFAULT_CASES if cases is None else cases
    return [suite(np.random.default_rng([seed, j]), cases) for j, suite in enumerate(SUITES)]
