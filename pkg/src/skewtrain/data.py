"""Datasets, long-tailed curation, and batch plumbing.

A Dataset is a frozen (X, y) pair with explicit class names; labels are
contiguous ids 0..K-1. Curation subsamples a (roughly balanced) pool
into an exponentially decaying class-size profile, which is how the
imbalance ratio r = min(n_c) / max(n_c) is controlled in experiments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    X: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int64
    class_names: list[str]

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError(f"X must be (n, d), got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError(f"y shape {self.y.shape} does not match X rows {self.X.shape[0]}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite feature values")
        k = len(self.class_names)
        if k < 1:
            raise ValueError("at least one class required")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= k):
            raise ValueError(f"labels outside [0, {k})")
        self.X.flags.writeable = False
        self.y.flags.writeable = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class ClassProfile:
    """Per-class sample counts for one split."""

    counts: np.ndarray  # (K,) int64
    num_classes: int = field(init=False)

    def __post_init__(self):
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("counts must be a non-empty vector")
        if np.any(self.counts < 1):
            raise ValueError("every class needs at least one sample for a profile")
        self.num_classes = int(self.counts.size)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def proportions(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def imbalance_ratio(self) -> float:
        return float(self.counts.min() / self.counts.max())


@dataclass
class AugmentSpec:
    """Gaussian jitter plus per-feature dropout for view generation."""

    sigma: float = 0.1
    feature_dropout_prob: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.feature_dropout_prob < 1.0:
            raise ValueError("feature_dropout_prob must be in [0, 1)")


def class_profile(dataset: Dataset) -> ClassProfile:
    """Counts over the declared classes; empty classes are an error."""
    counts = np.bincount(dataset.y, minlength=dataset.num_classes)
    if np.any(counts == 0):
        missing = [dataset.class_names[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"classes with no samples: {missing}")
    return ClassProfile(counts)


def load_csv(path, label_col: str) -> Dataset:
    """Read a feature table with one label column.

    Distinct label strings are sorted lexicographically and mapped to
    0..K-1; all other columns are parsed as float features in file
    order. Malformed rows are reported with their line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if label_col not in header:
            raise ValueError(f"{path}: no column named {label_col!r} in header {header}")
        label_idx = header.index(label_col)
        feature_cols = [i for i in range(len(header)) if i != label_idx]
        if not feature_cols:
            raise ValueError(f"{path}: no feature columns besides {label_col!r}")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in feature_cols])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric feature value ({exc})") from None
            labels.append(row[label_idx])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    names = sorted(set(labels))
    mapping = {name: i for i, name in enumerate(names)}
    y = np.array([mapping[s] for s in labels], dtype=np.int64)
    return Dataset(np.array(rows, dtype=np.float64), y, names)


def save_csv(path, dataset: Dataset, label_col: str = "label") -> None:
    """Inverse of load_csv, with features named f0..f{d-1}."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.d)] + [label_col])
        for x, label in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in x] + [dataset.class_names[label]])


def gen_gaussian_mixture(
    num_classes: int,
    n_per_class: int,
    dim: int = 2,
    mean_radius: float = 3.0,
    sigma: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Isotropic Gaussian blobs with means evenly spaced on a circle.

    The circle lives in the first two feature dimensions; any further
    dimensions carry pure noise around zero. Class k sits at angle
    2*pi*k/K, so the geometry is deterministic given the sizes.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if dim < 2:
        raise ValueError("dim must be >= 2 to place means on a circle")
    if sigma <= 0 or mean_radius < 0:
        raise ValueError("sigma must be > 0 and mean_radius >= 0")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = mean_radius * np.cos(angles)
    means[:, 1] = mean_radius * np.sin(angles)
    X = np.empty((num_classes * n_per_class, dim))
    y = np.empty(num_classes * n_per_class, dtype=np.int64)
    for k in range(num_classes):
        lo = k * n_per_class
        X[lo:lo + n_per_class] = means[k] + rng.normal(0.0, sigma, size=(n_per_class, dim))
        y[lo:lo + n_per_class] = k
    names = [f"class_{k}" for k in range(num_classes)]
    return Dataset(X, y, names)


def exponential_counts(n_max: int, ratio: float, num_classes: int) -> np.ndarray:
    """Target counts n_k = round(n_max * ratio**(k / (K-1))), floored at 1."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if num_classes == 1:
        return np.array([n_max], dtype=np.int64)
    ks = np.arange(num_classes)
    raw = n_max * ratio ** (ks / (num_classes - 1))
    return np.maximum(1, np.array([round(v) for v in raw], dtype=np.int64))


def curate_exponential(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Subsample to an exponential class-size profile.

    Class 0 keeps n_max (the largest class size in the input) samples
    and counts decay geometrically to roughly n_max * ratio for the
    last class, so the curated imbalance ratio is ratio up to rounding.
    Selection within each class is a seeded uniform draw without
    replacement; classes stay in ascending id order.
    """
    counts_in = np.bincount(dataset.y, minlength=dataset.num_classes)
    n_max = int(counts_in.max())
    targets = exponential_counts(n_max, ratio, dataset.num_classes)
    short = np.flatnonzero(counts_in < targets)
    if short.size:
        detail = ", ".join(
            f"{dataset.class_names[i]}: have {counts_in[i]}, need {targets[i]}" for i in short
        )
        raise ValueError(f"not enough samples to curate ({detail})")
    rng = np.random.default_rng(seed)
    keep = []
    for k in range(dataset.num_classes):
        members = np.flatnonzero(dataset.y == k)
        keep.append(rng.choice(members, size=int(targets[k]), replace=False))
    idx = np.concatenate(keep)
    return Dataset(dataset.X[idx], dataset.y[idx], list(dataset.class_names))


def grow_majority(
    pool: Dataset,
    n_majority: int,
    n_minority: int = 200,
    seed: int = 0,
    minority_class: int | None = None,
) -> Dataset:
    """Fix the minority class size and scale every other class.

    With minority_class unset, the rarest class in the pool (lowest id
    on ties) is the minority. All remaining classes get n_majority
    samples each, so in the binary case the imbalance ratio is
    n_minority / n_majority.
    """
    if n_majority < 1 or n_minority < 1:
        raise ValueError("class sizes must be >= 1")
    counts = np.bincount(pool.y, minlength=pool.num_classes)
    if np.any(counts == 0):
        raise ValueError("pool is missing samples for some classes")
    if minority_class is None:
        minority_class = int(np.argmin(counts))
    if not 0 <= minority_class < pool.num_classes:
        raise ValueError(f"minority_class {minority_class} out of range")
    rng = np.random.default_rng(seed)
    keep = []
    for k in range(pool.num_classes):
        want = n_minority if k == minority_class else n_majority
        members = np.flatnonzero(pool.y == k)
        if members.size < want:
            raise ValueError(
                f"class {pool.class_names[k]} has {members.size} samples, need {want}"
            )
        keep.append(rng.choice(members, size=want, replace=False))
    idx = np.concatenate(keep)
    return Dataset(pool.X[idx], pool.y[idx], list(pool.class_names))


def make_balanced_sampler(dataset: Dataset, batch_size: int, seed: int):
    """Infinite iterator over index batches with uniform class frequency.

    Each draw picks a class uniformly, then a sample uniformly within
    it, so expected class frequencies are 1/K regardless of imbalance.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    members = [np.flatnonzero(dataset.y == k) for k in range(dataset.num_classes)]
    if any(m.size == 0 for m in members):
        raise ValueError("balanced sampling needs every class non-empty")
    rng = np.random.default_rng(seed)

    def gen():
        k = dataset.num_classes
        while True:
            classes = rng.integers(0, k, size=batch_size)
            batch = np.array(
                [members[c][rng.integers(0, members[c].size)] for c in classes],
                dtype=np.int64,
            )
            yield batch

    return gen()


def augment_two_views(X: np.ndarray, spec: AugmentSpec, rng: np.random.Generator):
    """Two independent corrupted views of a batch.

    Each view adds N(0, sigma^2) noise and then zeroes features
    independently with probability feature_dropout_prob. With sigma 0
    and dropout 0 both views equal X exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    views = []
    for _ in range(2):
        v = X + rng.normal(0.0, spec.sigma, size=X.shape) if spec.sigma > 0 else X.copy()
        if spec.feature_dropout_prob > 0:
            mask = rng.random(X.shape) >= spec.feature_dropout_prob
            v = v * mask
        views.append(v)
    return views[0], views[1]
