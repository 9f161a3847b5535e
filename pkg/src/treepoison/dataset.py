"""Binary-labelled tabular data with a copy-free overlay of label flips."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

POSITIVE = 1
NEGATIVE = -1


class DatasetError(ValueError):
    pass


class LabelCounts(NamedTuple):
    positives: int
    negatives: int

    @property
    def total(self) -> int:
        return self.positives + self.negatives


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable feature matrix, original labels in {+1, -1}, and a flip set.

    ``features`` and the original labels are shared between a dataset and
    every view derived from it with :meth:`flip`; only the flip set differs.
    """

    __slots__ = ("features", "original_labels", "flips", "name", "feature_names", "_labels")

    def __init__(
        self,
        features,
        labels,
        flips: Iterable[int] = (),
        name: str = "",
        feature_names: Sequence[str] | None = None,
    ):
        x = np.array(features, dtype=np.float64, order="C", copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DatasetError("features must be a 2-d array")
        y = np.asarray(labels, dtype=np.int8).copy()
        if y.shape != (x.shape[0],):
            raise DatasetError(f"got {y.shape[0]} labels for {x.shape[0]} instances")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features must be finite")
        if y.size and not np.all((y == POSITIVE) | (y == NEGATIVE)):
            raise DatasetError("labels must be +1 or -1")
        self._init(_frozen(x), _frozen(y), frozenset(flips), name, feature_names)

    def _init(self, x, y, flips, name, feature_names):
        n = x.shape[0]
        for i in flips:
            if not 0 <= i < n:
                raise IndexError(f"flip index {i} out of range for {n} instances")
        self.features = x
        self.original_labels = y
        self.flips = flips
        self.name = name
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(x.shape[1])]
        self.feature_names = tuple(feature_names)
        self._labels = None

    @classmethod
    def _view(cls, base: "Dataset", flips: frozenset) -> "Dataset":
        d = cls.__new__(cls)
        d._init(base.features, base.original_labels, flips, base.name, base.feature_names)
        return d

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def labels(self) -> np.ndarray:
        """Effective labels, with the flip overlay applied (read-only)."""
        if self._labels is None:
            y = self.original_labels.copy()
            if self.flips:
                idx = np.fromiter(self.flips, dtype=np.intp, count=len(self.flips))
                y[idx] = -y[idx]
            self._labels = _frozen(y)
        return self._labels

    def flip(self, index: int) -> "Dataset":
        return apply_flip(self, index)

    def subset(self, indices, name: str | None = None) -> "Dataset":
        """A new dataset of the given rows with effective labels baked in."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            name=self.name if name is None else name,
            feature_names=self.feature_names,
        )

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, name=self.name, feature_names=self.feature_names)

    def __repr__(self) -> str:
        return f"Dataset(name={self.name!r}, n={self.n}, d={self.d}, flips={len(self.flips)})"


def apply_flip(d: Dataset, index: int) -> Dataset:
    """Return a view of ``d`` whose flip set toggles ``index``."""
    index = int(index)
    if not 0 <= index < d.n:
        raise IndexError(f"flip index {index} out of range for {d.n} instances")
    return Dataset._view(d, d.flips ^ {index})


def class_counts(d: Dataset, region=None) -> LabelCounts:
    y = d.labels if region is None else d.labels[np.asarray(region, dtype=np.intp)]
    pos = int(np.count_nonzero(y == POSITIVE))
    return LabelCounts(pos, int(y.size) - pos)


def load_csv(path, label_column: str, positive_value: str, name: str | None = None) -> Dataset:
    """Read a header-first CSV; every non-label column is parsed as float64."""
    return read_csv(path, label_column, positive_value, name)[0]


def read_csv(path, label_column: str, positive_value: str,
             name: str | None = None) -> tuple[Dataset, str | None]:
    """Like :func:`load_csv`, also returning the raw negative label value (None if absent)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty dataset") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DatasetError(f"{path}: no label column {label_column!r}")
        li = header.index(label_column)
        feature_names = [h for j, h in enumerate(header) if j != li]
        rows, raw_labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for j, c in enumerate(row) if j != li]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: missing or non-numeric feature") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"{path}:{lineno}: non-finite feature value")
            rows.append(vals)
            raw_labels.append(row[li].strip())
    if not rows:
        raise DatasetError(f"{path}: empty dataset")
    distinct = sorted(set(raw_labels))
    if len(distinct) > 2:
        raise DatasetError(f"{path}: more than two label values: {distinct}")
    if positive_value not in distinct and len(distinct) == 2:
        raise DatasetError(f"{path}: positive value {positive_value!r} not among {distinct}")
    labels = [POSITIVE if v == positive_value else NEGATIVE for v in raw_labels]
    negative = next((v for v in distinct if v != positive_value), None)
    return Dataset(rows, labels, name=name or path.stem, feature_names=feature_names), negative


def format_csv(d: Dataset, label_column: str = "label",
               positive_value: str = "1", negative_value: str = "-1") -> str:
    """CSV text with effective labels; ``repr`` of floats makes the round trip exact."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(d.feature_names) + [label_column])
    for x, y in zip(d.features, d.labels):
        w.writerow([repr(float(v)) for v in x] + [positive_value if y == POSITIVE else negative_value])
    return buf.getvalue()


def write_csv(d: Dataset, path, label_column: str = "label",
              positive_value: str = "1", negative_value: str = "-1") -> None:
    Path(path).write_text(format_csv(d, label_column, positive_value, negative_value), encoding="utf-8")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded per-class split; each class contributes round(size * fraction) test rows.

    Per-class counts use round-half-up. If their sum misses the rounded global
    test size, the larger class absorbs the difference. Both outputs keep the
    input's row order and carry effective labels with no flip overlay.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    y = d.labels
    pos = np.flatnonzero(y == POSITIVE)
    neg = np.flatnonzero(y == NEGATIVE)
    if pos.size == 0 or neg.size == 0:
        raise DatasetError("each class needs at least one instance")
    n_pos = _round_half_up(pos.size * test_fraction)
    n_neg = _round_half_up(neg.size * test_fraction)
    excess = n_pos + n_neg - _round_half_up(d.n * test_fraction)
    if pos.size >= neg.size:
        n_pos = min(max(n_pos - excess, 0), pos.size)
    else:
        n_neg = min(max(n_neg - excess, 0), neg.size)
    rng = np.random.default_rng(seed)
    test_idx = np.concatenate([
        rng.permutation(pos)[:n_pos],
        rng.permutation(neg)[:n_neg],
    ])
    mask = np.zeros(d.n, dtype=bool)
    mask[test_idx] = True
    train = d.subset(np.flatnonzero(~mask), name=f"{d.name}:train")
    test = d.subset(np.flatnonzero(mask), name=f"{d.name}:test")
    return train, test


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


def standardized_distances(d: Dataset) -> np.ndarray:
    """Pairwise Euclidean distances after per-feature standardization."""
    z = Standardizer.fit(d.features)(d.features)
    sq = np.einsum("ij,ij->i", z, z)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)
