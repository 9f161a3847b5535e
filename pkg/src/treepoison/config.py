"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
List-valued keys take comma-separated values. Unknown keys and malformed
values are rejected before any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from .attacks import STRATEGIES
from .dataset import NEGATIVE, POSITIVE

BUILTIN_PREFIX = "builtin:"
BUILTIN_DATASETS = {
    "breast_cancer": ("data/breast_cancer.csv", "diagnosis", "B"),
}

DEFENSES = ("knn", "bagging")


class ConfigError(ValueError):
    pass


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("", "none", "off") else float(s)


def _target(s: str) -> int:
    s = s.strip().lower()
    if s in ("positive", "+1", "1"):
        return POSITIVE
    if s in ("negative", "-1"):
        return NEGATIVE
    raise ValueError(f"expected positive or negative, got {s!r}")


# config key -> (field name, parser)
KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "dataset.path": ("dataset_path", str),
    "dataset.label_column": ("label_column", str),
    "dataset.positive_value": ("positive_value", str),
    "split.fraction": ("split_fraction", float),
    "split.seed": ("split_seed", int),
    "model.trees.min": ("trees_min", int),
    "model.trees.max": ("trees_max", int),
    "model.depth.min": ("depth_min", int),
    "model.depth.max": ("depth_max", int),
    "model.min_gain": ("min_gain", float),
    "model.feature_subsample": ("feature_subsample", _opt_float),
    "model.seed": ("model_seed", int),
    "grid.seed": ("grid_seed", int),
    "attack.strategy": ("strategy", str),
    "attack.budget": ("budget", float),
    "attack.target": ("target_class", _target),
    "attack.seed": ("attack_seed", int),
    "attack.score_aggregation": ("score_aggregation", str),
    "defense.enabled": ("defenses", _str_list),
    "defense.knn.N": ("knn_N", _int_list),
    "defense.knn.eta": ("knn_eta", _float_list),
    "defense.knn.M": ("knn_M", _int_list),
    "defense.bagging.G": ("bagging_G", _int_list),
    "defense.bagging.K": ("bagging_K", _float_list),
    "defense.bagging.seed": ("bagging_seed", int),
    "sweep.strategies": ("sweep_strategies", _str_list),
    "sweep.budgets": ("sweep_budgets", _float_list),
    "threads": ("threads", int),
    "output.dir": ("output_dir", str),
}
FIELD_TO_KEY = {f: k for k, (f, _) in KEYS.items()}
SEED_FIELDS = ("split_seed", "model_seed", "grid_seed", "attack_seed", "bagging_seed")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str = BUILTIN_PREFIX + "breast_cancer"
    label_column: Optional[str] = None
    positive_value: Optional[str] = None
    split_fraction: float = 0.2
    split_seed: int = 0
    trees_min: int = 2
    trees_max: int = 15
    depth_min: int = 2
    depth_max: int = 25
    min_gain: float = 0.0
    feature_subsample: Optional[float] = None
    model_seed: int = 0
    grid_seed: int = 0
    strategy: str = "timber"
    budget: float = 0.10
    target_class: int = POSITIVE
    attack_seed: int = 0
    score_aggregation: str = "mean"
    defenses: tuple = DEFENSES
    knn_N: tuple = (4, 8, 12)
    knn_eta: tuple = (0.6, 0.75, 0.9)
    knn_M: tuple = (1, 3, 5)
    bagging_G: tuple = tuple(range(5, 41, 5))
    bagging_K: tuple = (0.20, 0.10, 0.05, 0.025)
    bagging_seed: int = 0
    sweep_strategies: tuple = STRATEGIES
    sweep_budgets: tuple = tuple(round(0.01 * i, 2) for i in range(1, 11))
    threads: int = 16
    output_dir: str = "out"
    # directory that relative dataset paths resolve against
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(0 < self.split_fraction < 1, "split.fraction", "must be in (0, 1)")
        need(1 <= self.trees_min <= self.trees_max, "model.trees.min/max", "need 1 <= min <= max")
        need(1 <= self.depth_min <= self.depth_max, "model.depth.min/max", "need 1 <= min <= max")
        need(self.min_gain >= 0, "model.min_gain", "must be >= 0")
        need(self.feature_subsample is None or 0 < self.feature_subsample <= 1,
             "model.feature_subsample", "must be in (0, 1] or none")
        need(self.strategy in STRATEGIES, "attack.strategy", f"must be one of {', '.join(STRATEGIES)}")
        need(0 <= self.budget <= 0.10, "attack.budget", "must be in [0, 0.10]")
        need(self.score_aggregation in ("mean", "max"), "attack.score_aggregation", "must be mean or max")
        need(all(d in DEFENSES for d in self.defenses), "defense.enabled", f"must list only {DEFENSES}")
        need(self.knn_N and all(v >= 1 for v in self.knn_N), "defense.knn.N", "need values >= 1")
        need(self.knn_eta and all(0 < v <= 1 for v in self.knn_eta), "defense.knn.eta", "need values in (0, 1]")
        need(self.knn_M and all(v >= 1 for v in self.knn_M), "defense.knn.M", "need values >= 1")
        need(self.bagging_G and all(v >= 1 for v in self.bagging_G), "defense.bagging.G", "need values >= 1")
        need(self.bagging_K and all(0 < v <= 1 for v in self.bagging_K), "defense.bagging.K",
             "need values in (0, 1]")
        need(self.sweep_strategies and all(s in STRATEGIES for s in self.sweep_strategies),
             "sweep.strategies", f"must list only {', '.join(STRATEGIES)}")
        need(self.sweep_budgets and all(0 <= b <= 0.10 for b in self.sweep_budgets),
             "sweep.budgets", "need values in [0, 0.10]")
        need(self.threads >= 1, "threads", "must be >= 1")
        if self.dataset_path.startswith(BUILTIN_PREFIX):
            need(self.dataset_path[len(BUILTIN_PREFIX):] in BUILTIN_DATASETS, "dataset.path",
                 f"unknown built-in dataset; known: {', '.join(BUILTIN_DATASETS)}")
        else:
            need(self.label_column is not None, "dataset.label_column", "required for a CSV path")
            need(self.positive_value is not None, "dataset.positive_value", "required for a CSV path")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Every seed key set to ``seed``."""
        return replace(self, **{f: seed for f in SEED_FIELDS})

    def to_dict(self) -> dict:
        """Echo of every key, in key-table order, with JSON-friendly values."""
        out = {}
        for key, (name, _) in KEYS.items():
            v = getattr(self, name)
            if name == "target_class":
                v = "positive" if v == POSITIVE else "negative"
            out[key] = list(v) if isinstance(v, tuple) else v
        return out

    def to_text(self) -> str:
        lines = []
        for key, v in self.to_dict().items():
            if v is None:
                continue  # unset keys keep their defaults
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, base_dir: str = ".", overrides: dict | None = None) -> ExperimentConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name, conv = KEYS[key]
        if name in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[name] = conv(value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from None
    values.update(overrides or {})
    try:
        return ExperimentConfig(base_dir=base_dir, **values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, str(path.parent), overrides)

