"""Compiled kernels vs the numpy fallback on tree training, annotation and flip retraining.

    python benchmarks/bench_kernels.py [--n 2000] [--d 10] [--depth 8] [--repeat 3]

Prints one line per (task, backend) with the best-of-repeat time and the
speedup of the compiled backend. Both backends must produce identical trees.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from treepoison import _backend
from treepoison.annotation import flip_retrain
from treepoison.dataset import Dataset
from treepoison.tree import TreeParams, signature, tree_train


def make_data(n: int, d: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.where(X @ rng.normal(size=d) + rng.normal(scale=0.8, size=n) > 0, 1, -1)
    return Dataset(X, y)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--depth", type=int, default=8)
    ap.add_argument("--flips", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled extension not built; only the fallback is available")
    d = make_data(args.n, args.d, args.seed)
    p = TreeParams(args.depth)
    flips = np.random.default_rng(args.seed).choice(d.n, size=min(args.flips, d.n), replace=False)

    tasks = {
        "train": lambda: tree_train(d, None, p),
        "train+annotate": lambda: tree_train(d, None, p, annotate=True),
    }
    results: dict[tuple[str, str], float] = {}
    sigs = {}
    for name in backends:
        with _backend.using(name):
            base = tree_train(d, None, p, annotate=True)
            sigs[name] = signature(base.root)
            for task, fn in tasks.items():
                results[(task, name)] = best_of(fn, args.repeat)
            results[(f"flip_retrain x{flips.size}", name)] = best_of(
                lambda: [flip_retrain(base, d, int(i)) for i in flips], args.repeat)
    if len(set(sigs.values())) != 1:
        print("backends disagree on the trained tree")
        return 1

    print(f"n={args.n} d={args.d} depth={args.depth} best of {args.repeat}")
    for task in dict.fromkeys(t for t, _ in results):
        row = {b: results[(task, b)] for b in backends}
        line = "  ".join(f"{b} {row[b] * 1e3:9.2f} ms" for b in backends)
        if len(row) == 2:
            line += f"  speedup {row['python'] / row['cython']:6.1f}x"
        print(f"{task:<18} {line}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
