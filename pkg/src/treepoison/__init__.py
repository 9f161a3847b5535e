"""Decision trees and random forests instrumented for label-flipping poisoning research."""

__version__ = "0.1.0"

from . import _backend
from .annotation import annotate, flip_retrain, gain_triples, instance_score, is_stable
from .attacks import AttackConfig, AttackTrace, run_attack
from .dataset import Dataset, load_csv, stratified_split
from .defenses import BaggingDefenseParams, KnnDefenseParams, bagged_predict, hash_bagging_train, knn_sanitize
from .ensemble import Forest, ForestParams, forest_flip_retrain, forest_predict, forest_train
from .metrics import Metrics, compute_metrics
from .tree import DecisionTree, Split, TreeParams, predict, tree_train


def backend() -> str:
    """Name of the active kernel backend: "cython" or "python"."""
    return _backend.name


__all__ = [
    "AttackConfig", "AttackTrace", "BaggingDefenseParams", "Dataset", "DecisionTree", "Forest",
    "ForestParams", "KnnDefenseParams", "Metrics", "Split", "TreeParams", "annotate", "backend",
    "bagged_predict", "compute_metrics", "flip_retrain", "forest_flip_retrain", "forest_predict",
    "forest_train", "gain_triples", "hash_bagging_train", "instance_score", "is_stable", "knn_sanitize",
    "load_csv", "predict", "run_attack", "stratified_split", "tree_train",
]
