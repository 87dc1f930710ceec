"""Synthetic Gaussian-mixture data and CSV ingestion.

Labels are 0-based. For the binary mixtures, label 0 is the compact class
("-1") and label 1 the wide class ("+1"); signed formulas use
``2 * label - 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import generator

# Rows per independently keyed noise block. Fixed so that any parallel split
# over blocks reproduces the same matrix.
BLOCK_ROWS = 4096


class ParameterError(ValueError):
    pass


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    """Binary mixture with robust (``d``) and non-robust (``m``) coordinates.

    Class "+1" is centred on ``theta = (eta,)*d + (gamma,)*m`` with std
    ``k_ratio * sigma``; class "-1" on ``-theta`` with std ``sigma``.
    ``m = 0`` gives the plain two-Gaussian task.
    """

    d: int
    eta: float
    sigma: float = 1.0
    k_ratio: float = 2.0
    m: int = 0
    gamma: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"d must be an integer >= 1, got {self.d!r}")
        if int(self.m) != self.m or self.m < 0:
            raise ParameterError(f"m must be an integer >= 0, got {self.m!r}")
        if not self.eta > 0:
            raise ParameterError(f"eta must be positive, got {self.eta!r}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma!r}")
        if not self.k_ratio >= 1:
            raise ParameterError(f"k_ratio must be >= 1, got {self.k_ratio!r}")
        if self.gamma < 0:
            raise ParameterError(f"gamma must be non-negative, got {self.gamma!r}")
        if self.m > 0 and not self.gamma > 0:
            raise ParameterError("gamma must be positive when m > 0")
        for name in ("eta", "sigma", "k_ratio", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")

    @property
    def dim(self) -> int:
        return self.d + self.m

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([np.full(self.d, float(self.eta)), np.full(self.m, float(self.gamma))])

    def class_std(self, label: int) -> float:
        return self.k_ratio * self.sigma if label == 1 else self.sigma

    def replace(self, **changes) -> "MixtureSpec":
        values = {f: getattr(self, f) for f in ("d", "eta", "sigma", "k_ratio", "m", "gamma")}
        values.update(changes)
        return MixtureSpec(**values)


@dataclass(frozen=True)
class MulticlassMixtureSpec:
    centers: tuple
    sigmas: tuple

    def __post_init__(self):
        centers = tuple(tuple(float(v) for v in c) for c in self.centers)
        sigmas = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "sigmas", sigmas)
        if len(centers) < 2:
            raise ParameterError("need at least two classes")
        if len(centers) != len(sigmas):
            raise ParameterError(f"{len(centers)} centers but {len(sigmas)} sigmas")
        dims = {len(c) for c in centers}
        if len(dims) != 1 or 0 in dims:
            raise ParameterError(f"center dimensions disagree: {sorted(dims)}")
        if not all(s > 0 and math.isfinite(s) for s in sigmas):
            raise ParameterError("sigmas must be positive and finite")

    @property
    def class_count(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return len(self.centers[0])

    @classmethod
    def orthogonal(cls, sigmas: Sequence[float], distance: float = 4.0) -> "MulticlassMixtureSpec":
        """Centres on scaled basis vectors, every pair ``distance`` apart."""
        c = len(sigmas)
        scale = distance / math.sqrt(2.0)
        centers = [tuple(scale if j == i else 0.0 for j in range(c)) for i in range(c)]
        return cls(tuple(centers), tuple(sigmas))


def benchmark4() -> MulticlassMixtureSpec:
    """Reference 4-class task: two compact and two wide classes."""
    return MulticlassMixtureSpec.orthogonal([1.0, 1.0, 2.0, 2.0], distance=4.0)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    per_class_index: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if x.ndim != 2:
            raise ParameterError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ParameterError("labels must be a vector with one entry per row")
        if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
            raise ParameterError("labels must be integers")
        y = y.astype(np.int64)
        if self.class_count < 1 or (y.size and (y.min() < 0 or y.max() >= self.class_count)):
            raise ParameterError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(x)):
            raise ParameterError("features contain non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        index = tuple(np.flatnonzero(y == c) for c in range(self.class_count))
        for idx in index:
            idx.setflags(write=False)
        object.__setattr__(self, "per_class_index", index)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_sizes(self) -> np.ndarray:
        return np.array([len(i) for i in self.per_class_index])

    def equals(self, other: "Dataset") -> bool:
        return (
            self.class_count == other.class_count
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def gaussian_block_noise(seed: int, stream: str, n: int, p: int) -> np.ndarray:
    """Standard normal ``n x p`` matrix built from independently keyed row blocks."""
    out = np.empty((n, p))
    for b, start in enumerate(range(0, n, BLOCK_ROWS)):
        stop = min(start + BLOCK_ROWS, n)
        out[start:stop] = generator(seed, stream, b).standard_normal((stop - start, p))
    return out


def _class_rows(seed: int, label: int, n: int, mean: np.ndarray, std: float) -> np.ndarray:
    return mean + std * gaussian_block_noise(seed, f"class-{label}", n, mean.shape[0])


def sample_binary_mixture(spec: MixtureSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` rows: ``n // 2`` of class 0 followed by the rest of class 1."""
    if not isinstance(spec, MixtureSpec):
        raise ParameterError("spec must be a MixtureSpec")
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    n0 = n // 2
    theta = spec.theta
    x0 = _class_rows(seed, 0, n0, -theta, spec.class_std(0))
    x1 = _class_rows(seed, 1, n - n0, theta, spec.class_std(1))
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)])
    return Dataset(np.vstack([x0, x1]), labels, 2)


def sample_multiclass_mixture(spec: MulticlassMixtureSpec, n_per_class: int, seed: int) -> Dataset:
    if n_per_class < 1:
        raise ParameterError(f"n_per_class must be >= 1, got {n_per_class}")
    blocks = [
        _class_rows(seed, c, n_per_class, np.asarray(center), sigma)
        for c, (center, sigma) in enumerate(zip(spec.centers, spec.sigmas))
    ]
    labels = np.repeat(np.arange(spec.class_count, dtype=np.int64), n_per_class)
    return Dataset(np.vstack(blocks), labels, spec.class_count)


def save_csv_dataset(data: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(data.dim)] + ["label"])
        for row, label in zip(data.features, data.labels):
            writer.writerow([format(v, ".17g") for v in row] + [int(label)])


def load_csv_dataset(path, label_column: str = "label") -> Dataset:
    """Read a headed CSV; every non-label column becomes a feature."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise IngestionError(f"{path}: no column named {label_column!r}")
    li = header.index(label_column)
    feature_cols = [j for j in range(len(header)) if j != li]
    body = [r for r in rows[1:] if r]
    if not body:
        raise IngestionError(f"{path}: no data rows")
    features = np.empty((len(body), len(feature_cols)))
    labels = np.empty(len(body), dtype=np.int64)
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise IngestionError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        cell = row[li].strip()
        if cell == "":
            raise IngestionError(f"{path}: row {i}, column {label_column!r}: missing label")
        try:
            label = int(cell)
        except ValueError:
            raise IngestionError(f"{path}: row {i}, column {label_column!r}: label {cell!r} is not an integer") from None
        if label < 0:
            raise IngestionError(f"{path}: row {i}, column {label_column!r}: labels must be 0-based, got {label}")
        labels[i - 2] = label
        for k, j in enumerate(feature_cols):
            try:
                v = float(row[j])
            except ValueError:
                raise IngestionError(f"{path}: row {i}, column {header[j]!r}: non-numeric value {row[j]!r}") from None
            if not math.isfinite(v):
                raise IngestionError(f"{path}: row {i}, column {header[j]!r}: non-finite value")
            features[i - 2, k] = v
    return Dataset(features, labels, int(labels.max()) + 1)
