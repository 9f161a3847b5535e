"""Grid search, defenses tuning, and the end-to-end poisoning experiment.

Pipeline stages run in order: load, split, clean grid search, attack,
poisoned retrain, defense tuning, report. Within a stage, independent work
(grid points, attack candidates, bagging members) shares one worker pool.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import shutil
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .attacks import INCREMENTAL, AttackConfig, AttackTrace, run_attack
from .config import BUILTIN_DATASETS, BUILTIN_PREFIX, ExperimentConfig
from .dataset import Dataset, class_counts, format_csv, read_csv, stratified_split
from .defenses import (HASH_SCHEME, BaggingDefenseParams, KnnDefenseParams, hash_bagging_train,
                       knn_sanitize)
from .ensemble import Forest, ForestParams, forest_scores, forest_train
from .metrics import Metrics, compute_metrics
from .tree import TreeParams

REPORT_FORMAT = "treepoison.report"
REPORT_VERSION = 1
VALIDATION_FRACTION = 0.2


class ExperimentError(RuntimeError):
    """A pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@contextmanager
def stage(name: str, timing: dict | None = None) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    except ExperimentError:
        raise
    except Exception as e:
        raise ExperimentError(name, e) from e
    finally:
        if timing is not None:
            timing[name] = timing.get(name, 0.0) + time.perf_counter() - start


# --- data ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelSchema:
    column: str
    positive: str
    negative: str

    def csv(self, d: Dataset) -> str:
        return format_csv(d, self.column, self.positive, self.negative)


def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, LabelSchema]:
    if cfg.dataset_path.startswith(BUILTIN_PREFIX):
        name = cfg.dataset_path[len(BUILTIN_PREFIX):]
        rel, label, pos = BUILTIN_DATASETS[name]
        label = cfg.label_column or label
        pos = cfg.positive_value or pos
        with resources.as_file(resources.files("treepoison").joinpath(rel)) as p:
            d, neg = read_csv(p, label, pos, name=name)
    else:
        label, pos = cfg.label_column, cfg.positive_value
        path = Path(cfg.dataset_path)
        if not path.is_absolute():
            path = Path(cfg.base_dir) / path
        d, neg = read_csv(path, label, pos)
    return d, LabelSchema(label, pos, neg if neg is not None else f"not_{pos}")


# --- grid search --------------------------------------------------------------------------

def model_grid(cfg: ExperimentConfig) -> list[ForestParams]:
    """Forest configurations in grid order: trees outer, depth inner."""
    return [
        ForestParams(n_trees=t, tree_params=TreeParams(dep, cfg.min_gain),
                     feature_subsample=cfg.feature_subsample, seed=cfg.model_seed)
        for t in range(cfg.trees_min, cfg.trees_max + 1)
        for dep in range(cfg.depth_min, cfg.depth_max + 1)
    ]


@dataclass(frozen=True)
class GridResult:
    params: ForestParams
    validation_f1: float
    model: Forest
    scores: tuple  # validation F1 per grid point, in grid order


def _size_key(p: ForestParams) -> tuple:
    return (p.n_trees, p.tree_params.max_depth)


def select_best(points: Sequence, f1s: Sequence[float], key=None) -> int:
    """Index of the highest F1; ties go to the smaller ``key``, then to grid order."""
    key = key or (lambda p: ())
    return min(range(len(points)), key=lambda i: (-f1s[i], key(points[i]), i))


def grid_search(train: Dataset, grid: Sequence[ForestParams], selection_seed: int,
                executor: Executor | None = None, annotate: bool = False) -> GridResult:
    """Pick the grid point with the best F1 on a seeded stratified 80/20 validation split.

    Ties go to fewer trees, then smaller depth, then grid order. The winner
    is refit on the whole of ``train``.
    """
    if not grid:
        raise ValueError("empty model grid")
    sub, val = stratified_split(train, VALIDATION_FRACTION, selection_seed)
    cache: dict = {}

    def score(p: ForestParams) -> float:
        return compute_metrics(forest_train(sub, p, annotate=False, cache=cache), val).f1

    # trees shared between grid points are trained once through ``cache``
    f1s = [score(p) for p in grid] if executor is None else _ordered_map(executor, score, grid)
    best = select_best(grid, f1s, _size_key)
    model = forest_train(train, grid[best], annotate=annotate, executor=executor)
    return GridResult(grid[best], f1s[best], model, tuple(f1s))


def _ordered_map(executor: Executor, fn, items) -> list:
    return list(executor.map(fn, items))


# --- defenses -----------------------------------------------------------------------------

def knn_grid(cfg: ExperimentConfig) -> list[KnnDefenseParams]:
    return [KnnDefenseParams(N, eta, M) for N, eta, M in itertools.product(cfg.knn_N, cfg.knn_eta, cfg.knn_M)]


def bagging_grid(cfg: ExperimentConfig) -> list[BaggingDefenseParams]:
    return [BaggingDefenseParams(G, K, cfg.bagging_seed) for G, K in itertools.product(cfg.bagging_G, cfg.bagging_K)]


@dataclass
class DefenseResult:
    name: str
    params: dict
    validation_f1: float
    metrics: Metrics
    sanitized: Optional[Dataset] = None

    def to_dict(self, f1_clean: float, f1_poisoned: float) -> dict:
        return {
            "params": self.params,
            "validation_f1": self.validation_f1,
            "accuracy": self.metrics.accuracy,
            "f1": self.metrics.f1,
            "benefit": self.metrics.f1 - f1_poisoned,
            "residual_damage": f1_clean - self.metrics.f1,
        }


def tune_knn(train: Dataset, test: Dataset, model_params: ForestParams, grid: Sequence[KnnDefenseParams],
             selection_seed: int, executor: Executor | None = None) -> DefenseResult:
    """Choose kNN sanitization settings on a validation split of ``train`` (labels as given)."""
    sub, val = stratified_split(train, VALIDATION_FRACTION, selection_seed)
    usable = [p for p in grid if p.N < sub.n]
    if not usable:
        raise ValueError("no kNN setting has N below the sub-train size")

    def score(p):
        return compute_metrics(forest_train(knn_sanitize(sub, p), model_params, annotate=False), val).f1

    f1s = [score(p) for p in usable] if executor is None else _ordered_map(executor, score, usable)
    best = usable[select_best(usable, f1s)]
    clean = knn_sanitize(train, best)
    model = forest_train(clean, model_params, annotate=False, executor=executor)
    return DefenseResult("knn", {"N": best.N, "eta": best.eta, "M": best.M}, max(f1s),
                         compute_metrics(model, test), sanitized=clean)


def tune_bagging(train: Dataset, test: Dataset, model_params: ForestParams,
                 grid: Sequence[BaggingDefenseParams], selection_seed: int,
                 executor: Executor | None = None) -> DefenseResult:
    """Choose hash-bagging settings on a validation split of ``train`` (labels as given)."""
    sub, val = stratified_split(train, VALIDATION_FRACTION, selection_seed)
    usable = [p for p in grid if round_half_up(p.K * sub.n) >= 2]
    if not usable:
        raise ValueError("every bagging setting gives subsets smaller than two instances")

    def score(p):
        return compute_metrics(hash_bagging_train(sub, p, model_params), val).f1

    f1s = [score(p) for p in usable] if executor is None else _ordered_map(executor, score, usable)
    best = usable[select_best(usable, f1s)]
    model = hash_bagging_train(train, best, model_params, executor=executor)
    return DefenseResult("bagging", {"G": best.G, "K": best.K, "seed": best.seed, "hash": HASH_SCHEME},
                         max(f1s), compute_metrics(model, test))


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# --- reports ------------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: dict
    dataset: dict
    model: dict
    clean: Metrics
    poisoned: Metrics
    attack: dict
    defenses: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def f1_clean(self) -> float:
        return self.clean.f1

    @property
    def f1_poisoned(self) -> float:
        return self.poisoned.f1

    def benefit(self, defense: str) -> float:
        return self.defenses[defense]["benefit"]

    def residual_damage(self, defense: str) -> float:
        return self.defenses[defense]["residual_damage"]

    def to_dict(self) -> dict:
        out = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config": self.config,
            "dataset": self.dataset,
            "model": self.model,
            "f1_clean": self.clean.f1,
            "accuracy_clean": self.clean.accuracy,
            "f1_poisoned": self.poisoned.f1,
            "accuracy_poisoned": self.poisoned.accuracy,
        }
        for name, d in self.defenses.items():
            out[f"f1_{name}_defended"] = d["f1"]
            out[f"accuracy_{name}_defended"] = d["accuracy"]
        out["attack"] = self.attack
        out["defenses"] = self.defenses
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def score_cdf_csv(scores: np.ndarray) -> str:
    """Rows (index, mean_score, cdf) sorted by score; cdf is the fraction of scores <= this one."""
    idx = np.flatnonzero(~np.isnan(scores))
    s = scores[idx]
    order = np.lexsort((idx, s))
    srt = np.sort(s)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "mean_score", "cdf"])
    for j in order:
        cdf = np.searchsorted(srt, s[j], side="right") / s.size
        w.writerow([int(idx[j]), repr(float(s[j])), repr(float(cdf))])
    return buf.getvalue()


class Outputs:
    """Files staged in memory and written together; nothing is left behind on failure."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self) -> list[Path]:
        created_dir = not self.out_dir.exists()
        written: list[Path] = []
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name, text in self.files.items():
                p = self.out_dir / name
                p.write_text(text, encoding="utf-8")
                written.append(p)
        except BaseException:
            for p in written:
                p.unlink(missing_ok=True)
            if created_dir:
                shutil.rmtree(self.out_dir, ignore_errors=True)
            raise
        return written


def _dataset_info(d: Dataset, train: Dataset, test: Dataset, schema: LabelSchema) -> dict:
    c = class_counts(d)
    return {
        "name": d.name, "n": d.n, "d": d.d, "label_column": schema.column,
        "positive_value": schema.positive, "negative_value": schema.negative,
        "positives": c.positives, "negatives": c.negatives, "n_train": train.n, "n_test": test.n,
    }


def _model_info(g: GridResult) -> dict:
    out = g.params.to_dict()
    out["validation_f1"] = g.validation_f1
    return out


@contextmanager
def _pool(threads: int) -> Iterator[Optional[Executor]]:
    if threads <= 1:
        yield None
        return
    ex = ThreadPoolExecutor(threads)
    try:
        yield ex
    finally:
        ex.shutdown()


def prepare(cfg: ExperimentConfig, timing: dict | None = None):
    with stage("load", timing):
        d, schema = load_dataset(cfg)
    with stage("split", timing):
        train, test = stratified_split(d, cfg.split_fraction, cfg.split_seed)
    return d, train, test, schema


def attack_config(cfg: ExperimentConfig, strategy: str | None = None, budget: float | None = None) -> AttackConfig:
    return AttackConfig(strategy=strategy or cfg.strategy, budget_fraction=cfg.budget if budget is None else budget,
                        target_class=cfg.target_class, seed=cfg.attack_seed, threads=cfg.threads,
                        score_aggregation=cfg.score_aggregation)


def run_experiment(cfg: ExperimentConfig, out_dir=None, write: bool = True) -> ExperimentReport:
    """The full pipeline; writes report.json, trace.csv, score_cdf.csv and audit CSVs to ``out_dir``.

    Wall-clock timings go to timing.json so that report.json is
    byte-identical across reruns of the same config.
    """
    timing: dict[str, float] = {}
    out = Outputs(cfg.output_dir if out_dir is None else out_dir)
    d, train, test, schema = prepare(cfg, timing)
    with _pool(cfg.threads) as ex:
        with stage("grid_search", timing):
            g = grid_search(train, model_grid(cfg), cfg.grid_seed, ex, annotate=True)
            clean = compute_metrics(g.model, test)
        with stage("attack", timing):
            trace = run_attack(g.params, train, attack_config(cfg), eval_set=test)
            poisoned_train = trace.poisoned(train)
        with stage("poisoned_retrain", timing):
            poisoned_model = forest_train(poisoned_train, g.params, annotate=False, executor=ex)
            poisoned = compute_metrics(poisoned_model, test)
        defenses = {}
        sanitized = None
        if "knn" in cfg.defenses:
            with stage("defense_knn", timing):
                r = tune_knn(poisoned_train, test, g.params, knn_grid(cfg), cfg.grid_seed, ex)
                defenses["knn"] = r.to_dict(clean.f1, poisoned.f1)
                sanitized = r.sanitized
        if "bagging" in cfg.defenses:
            with stage("defense_bagging", timing):
                r = tune_bagging(poisoned_train, test, g.params, bagging_grid(cfg), cfg.grid_seed, ex)
                defenses["bagging"] = r.to_dict(clean.f1, poisoned.f1)
    with stage("report", timing):
        scores = trace.mean_scores
        if scores is None:
            scores = forest_scores(g.model, train, cfg.score_aggregation)
        attack = trace.to_dict(timing=False)
        attack.pop("clean")
        attack["flips"] = trace.flips
        attack["trace"] = "trace.csv"
        attack["score_source"] = "mean over rounds" if cfg.strategy in INCREMENTAL else "clean model"
        echo = cfg.to_dict()
        echo.pop("output.dir")  # where results land does not change them
        report = ExperimentReport(
            config=echo, dataset=_dataset_info(d, train, test, schema), model=_model_info(g),
            clean=clean, poisoned=poisoned, attack=attack, defenses=defenses,
        )
        out.add("report.json", report.to_json())
        out.add("trace.csv", trace.to_csv())
        out.add("score_cdf.csv", score_cdf_csv(scores))
        out.add("train.csv", schema.csv(train))
        out.add("test.csv", schema.csv(test))
        out.add("poisoned_train.csv", schema.csv(poisoned_train))
        if sanitized is not None:
            out.add("knn_sanitized_train.csv", schema.csv(sanitized))
        timing["attack_wall_time"] = trace.wall_time
        report.timing = timing
        out.add("timing.json", json.dumps(timing, indent=2) + "\n")
        if write:
            out.commit()
    return report


# --- entry points used by the CLI ------------------------------------------------------------

def train_model(cfg: ExperimentConfig) -> tuple[GridResult, Metrics, Dataset, Dataset]:
    _, train, test, _ = prepare(cfg)
    with _pool(cfg.threads) as ex, stage("grid_search"):
        g = grid_search(train, model_grid(cfg), cfg.grid_seed, ex)
        return g, compute_metrics(g.model, test), train, test


def attack_only(cfg: ExperimentConfig) -> tuple[GridResult, AttackTrace]:
    _, train, test, _ = prepare(cfg)
    with _pool(cfg.threads) as ex, stage("grid_search"):
        g = grid_search(train, model_grid(cfg), cfg.grid_seed, ex)
    with stage("attack"):
        return g, run_attack(g.params, train, attack_config(cfg), eval_set=test)


def defend_only(cfg: ExperimentConfig) -> tuple[dict, Optional[Dataset], LabelSchema]:
    """Treat the configured training split as possibly poisoned; tune and apply each defense."""
    _, train, test, schema = prepare(cfg)
    with _pool(cfg.threads) as ex:
        with stage("grid_search"):
            g = grid_search(train, model_grid(cfg), cfg.grid_seed, ex)
            undefended = compute_metrics(g.model, test)
        out = {"model": _model_info(g), "undefended": undefended.to_dict(), "defenses": {}}
        sanitized = None
        if "knn" in cfg.defenses:
            with stage("defense_knn"):
                r = tune_knn(train, test, g.params, knn_grid(cfg), cfg.grid_seed, ex)
                out["defenses"]["knn"] = r.to_dict(undefended.f1, undefended.f1)
                sanitized = r.sanitized
        if "bagging" in cfg.defenses:
            with stage("defense_bagging"):
                r = tune_bagging(train, test, g.params, bagging_grid(cfg), cfg.grid_seed, ex)
                out["defenses"]["bagging"] = r.to_dict(undefended.f1, undefended.f1)
    for v in out["defenses"].values():
        v.pop("residual_damage")
    return out, sanitized, schema


SWEEP_COLUMNS = ["strategy", "budget", "k", "accuracy", "f1", "accuracy_loss", "f1_loss", "workload"]


def sweep(cfg: ExperimentConfig) -> tuple[str, dict]:
    """Strategy x budget matrix of post-attack test metrics.

    Every strategy's flip sequence at a smaller budget is a prefix of its
    sequence at the largest one, so each strategy runs once and smaller
    budgets are read from the trace.
    """
    _, train, test, _ = prepare(cfg)
    with _pool(cfg.threads) as ex, stage("grid_search"):
        g = grid_search(train, model_grid(cfg), cfg.grid_seed, ex)
    clean = compute_metrics(g.model, test)
    top = max(cfg.sweep_budgets)
    rows = []
    workloads: dict[str, list[int]] = {}
    for strategy in cfg.sweep_strategies:
        with stage(f"attack_{strategy}"):
            trace = run_attack(g.params, train, attack_config(cfg, strategy, top), eval_set=test)
        cum = np.cumsum([0] + [r.retrain_workload for r in trace.rounds]).tolist()
        workloads[strategy] = cum
        for b in cfg.sweep_budgets:
            k = AttackConfig(budget_fraction=b).k(train.n)
            m = clean if k == 0 else Metrics(trace.rounds[k - 1].accuracy, trace.rounds[k - 1].f1)
            rows.append([strategy, repr(b), k, repr(m.accuracy), repr(m.f1),
                         repr(clean.accuracy - m.accuracy), repr(clean.f1 - m.f1), cum[k]])
    # Timber makes Greedy's choices with partial retraining, so it never costs more
    if "timber" in workloads and "greedy" in workloads:
        if any(a > b for a, b in zip(workloads["timber"], workloads["greedy"])):
            raise ExperimentError("sweep", AssertionError("Timber workload exceeds Greedy's"))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    w.writerows(rows)
    return buf.getvalue(), {"clean": clean.to_dict(), "model": _model_info(g)}
