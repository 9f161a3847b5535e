from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import POSITIVE, Dataset
from .ensemble import Forest, forest_predict_many
from .tree import DecisionTree, predict_many


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    f1: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "f1": self.f1}


def predict_labels(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, Forest):
        return forest_predict_many(model, X)
    if isinstance(model, DecisionTree):
        return predict_many(model, X)
    return model.predict_many(X)


def metrics_from_predictions(pred: np.ndarray, truth: np.ndarray, positive: int = POSITIVE) -> Metrics:
    """Accuracy and positive-class F1 = 2TP / (2TP + FP + FN); F1 is 0 when that denominator is 0."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("metrics of an empty dataset are undefined")
    tp = int(np.count_nonzero((pred == positive) & (truth == positive)))
    fp = int(np.count_nonzero((pred == positive) & (truth != positive)))
    fn = int(np.count_nonzero((pred != positive) & (truth == positive)))
    correct = int(np.count_nonzero(pred == truth))
    denom = 2 * tp + fp + fn
    return Metrics(correct / truth.size, (2 * tp / denom) if denom else 0.0)


def compute_metrics(model, d: Dataset, positive: int = POSITIVE) -> Metrics:
    return metrics_from_predictions(predict_labels(model, d.features), d.labels, positive)
