"""Synthetic partial-shift domains, CSV I/O, and deterministic batching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise DataError(f"features must be a non-empty n x d matrix, got {self.features.shape}")
        if self.labels.size != self.features.shape[0]:
            raise DataError(f"{self.features.shape[0]} rows but {self.labels.size} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.num_classes)


@dataclass(frozen=True)
class ShiftSpec:
    num_source_classes: int = 10
    num_target_classes: int = 5
    source_per_class: int = 200
    target_per_class: int = 100
    dim: int = 2
    angle: float = math.radians(15.0)
    translation: tuple[float, ...] = (1.0, 1.0)
    noise_scale: float = 0.6
    radius: float = field(default=5.0)

    def validate(self):
        if self.num_source_classes < 1 or self.num_target_classes < 1:
            raise DataError("class counts must be >= 1")
        if self.num_target_classes > self.num_source_classes:
            raise DataError(f"target classes ({self.num_target_classes}) exceed source classes "
                            f"({self.num_source_classes})")
        if self.source_per_class < 1 or self.target_per_class < 1:
            raise DataError("samples per class must be >= 1")
        if self.dim < 2:
            raise DataError(f"dim must be >= 2, got {self.dim}")
        if not math.isfinite(self.angle):
            raise DataError("angle must be finite")
        if len(self.translation) > self.dim:
            raise DataError(f"translation has {len(self.translation)} entries for dim {self.dim}")
        if not self.noise_scale > 0:
            raise DataError(f"noise_scale must be positive, got {self.noise_scale}")


def class_means(spec: ShiftSpec) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(spec.num_source_classes) / spec.num_source_classes
    means = np.zeros((spec.num_source_classes, spec.dim))
    means[:, 0] = spec.radius * np.cos(theta)
    means[:, 1] = spec.radius * np.sin(theta)
    return means


def _draw(rng, means, classes, per_class, noise):
    labels = np.repeat(np.asarray(classes), per_class)
    x = means[labels] + noise * rng.standard_normal((labels.size, means.shape[1]))
    return x, labels


def generate_shifted_blobs(spec: ShiftSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Source: C_s Gaussian clusters on a circle. Target: the first C_t clusters, rotated and shifted.

    The rotation acts in the plane of the first two coordinates.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    means = class_means(spec)
    xs, ys = _draw(rng, means, range(spec.num_source_classes), spec.source_per_class,
                   spec.noise_scale)
    xt, yt = _draw(rng, means, range(spec.num_target_classes), spec.target_per_class,
                   spec.noise_scale)
    c, s = math.cos(spec.angle), math.sin(spec.angle)
    rot = np.eye(spec.dim)
    rot[:2, :2] = [[c, -s], [s, c]]
    shift = np.zeros(spec.dim)
    shift[:len(spec.translation)] = spec.translation
    xt = xt @ rot.T + shift
    return (Dataset(xs, ys, spec.num_source_classes),
            Dataset(xt, yt, spec.num_source_classes))


def save_csv(ds: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read ``f0,...,f{d-1},label`` rows; ``num_classes`` defaults to max label + 1."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise DataError(f"{path}:1: header must be f0..f{{d-1}},label, got {header}")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                values = [float(v) for v in row[:d]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            raw = row[d].strip()
            if not raw.isdigit():
                raise DataError(f"{path}:{lineno}: label {raw!r} is not a non-negative integer")
            feats.append(values)
            labels.append(int(raw))
    if not feats:
        raise DataError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    c = int(labels_arr.max()) + 1 if num_classes is None else num_classes
    if labels_arr.max() >= c:
        raise DataError(f"{path}: label {labels_arr.max()} exceeds num_classes {c}")
    return Dataset(np.asarray(feats, dtype=np.float64), labels_arr, c)


def _check_batch(batch_size: int):
    if batch_size < 2 or batch_size % 2:
        raise DataError(f"batch_size must be even and >= 2, got {batch_size}")


def minibatches(ds_or_n, batch_size: int, seed: int, shuffle: bool = True,
                epoch: int = 0) -> list[np.ndarray]:
    """Index slices for one epoch; the final short batch is dropped."""
    _check_batch(batch_size)
    n = ds_or_n if isinstance(ds_or_n, int) else len(ds_or_n)
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def paired_batches(n_source: int, n_target: int, batch_size: int, seed: int,
                   epoch: int, shuffle: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
    """Equal-size (source, target) batches for one epoch.

    The epoch covers the larger domain once; the smaller domain's stream wraps
    around, drawing a fresh permutation each time it is exhausted.
    """
    _check_batch(batch_size)
    steps = max(n_source, n_target) // batch_size
    if steps == 0:
        raise DataError(f"batch_size {batch_size} exceeds both domain sizes")

    def stream(n, salt):
        need = steps * batch_size
        parts, k = [], 0
        while sum(p.size for p in parts) < need:
            rng = np.random.default_rng([seed, epoch, salt, k])
            parts.append(rng.permutation(n) if shuffle else np.arange(n))
            k += 1
        return np.concatenate(parts)[:need]

    src, tgt = stream(n_source, 0), stream(n_target, 1)
    return [(src[i * batch_size:(i + 1) * batch_size], tgt[i * batch_size:(i + 1) * batch_size])
            for i in range(steps)]
