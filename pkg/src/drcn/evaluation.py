"""Accuracy, proxy A-distance, layer-response and class-weight statistics, feature dumps."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .network import DrcnModel, forward_source, forward_target

PAD_MIN_SAMPLES = 20


@dataclass
class EvalReport:
    target_accuracy: float
    proxy_a_distance: float
    layer_stats: dict[str, tuple[float, float]]
    shared_weight_mean: float
    outlier_weight_mean: Optional[float]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["layer_stats"] = {k: {"mean": m, "variance": v} for k, (m, v) in self.layer_stats.items()}
        return out


def accuracy(model: DrcnModel, ds: Dataset) -> float:
    """Fraction of rows whose target-path eval-mode argmax equals the label."""
    pred = forward_target(model, ds.features, "eval").probs.value.argmax(1)
    return float(np.mean(pred == ds.labels))


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def proxy_a_distance(feat_s, feat_t, seed: int = 0, steps: int = 100, lr: float = 0.1) -> float:
    """2 (1 - 2 eps) where eps is the held-out error of a linear source-vs-target probe.

    The larger domain is subsampled to the size of the smaller one, the pooled
    rows are split in half, and a logistic regression is fitted on the
    standardized first half by full-batch gradient descent. The result is not
    clamped, so it can be negative when the probe does worse than chance.
    """
    fs = np.asarray(feat_s, dtype=np.float64)
    ft = np.asarray(feat_t, dtype=np.float64)
    if fs.shape[0] < PAD_MIN_SAMPLES or ft.shape[0] < PAD_MIN_SAMPLES:
        raise ValueError(f"proxy_a_distance needs >= {PAD_MIN_SAMPLES} samples per domain, "
                         f"got {fs.shape[0]} and {ft.shape[0]}")
    if fs.shape[1] != ft.shape[1]:
        raise ValueError(f"feature dimension mismatch {fs.shape} vs {ft.shape}")
    rng = np.random.default_rng(seed)
    n = min(fs.shape[0], ft.shape[0])
    fs = fs[rng.permutation(fs.shape[0])[:n]]
    ft = ft[rng.permutation(ft.shape[0])[:n]]
    x = np.vstack([fs, ft])
    y = np.concatenate([np.zeros(n), np.ones(n)])
    order = rng.permutation(2 * n)
    train, test = order[:n], order[n:]
    mu = x[train].mean(0)
    sd = x[train].std(0)
    sd[sd == 0] = 1.0
    z = (x - mu) / sd
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(steps):
        p = _sigmoid(z[train] @ w + b)
        r = p - y[train]
        w -= lr * z[train].T @ r / n
        b -= lr * r.mean()
    err = float(np.mean((z[test] @ w + b > 0) != (y[test] == 1)))
    return pad_from_error(err)


def pad_from_error(err: float) -> float:
    return 2.0 * (1.0 - 2.0 * err)


def _stats(a: np.ndarray) -> tuple[float, float]:
    return float(a.mean()), float(a.var())


def layer_response_stats(model: DrcnModel, xs, xt) -> dict[str, tuple[float, float]]:
    """(mean, variance) over all entries of F_s(x_s), F_s(x_t), the correction and F_t(x_t)."""
    rs = forward_source(model, xs, "eval")
    rt = forward_target(model, xt, "eval")
    delta = rt.delta.value if rt.delta is not None else np.zeros(rt.features.shape)
    return {
        "source_features": _stats(rs.features.value),
        "target_features": _stats(rt.features.value),
        "target_delta": _stats(delta),
        "target_corrected": _stats(rt.corrected.value),
    }


def weight_split_report(w, num_target_classes: int) -> tuple[float, Optional[float]]:
    """Mean class weight over the shared classes (< C_t) and over the outliers."""
    w = np.asarray(w, dtype=np.float64).ravel()
    if not 1 <= num_target_classes <= w.size:
        raise ValueError(f"num_target_classes must lie in [1, {w.size}], got {num_target_classes}")
    shared = float(w[:num_target_classes].mean())
    outlier = float(w[num_target_classes:].mean()) if num_target_classes < w.size else None
    return shared, outlier


def evaluate(model: DrcnModel, source: Dataset, target: Dataset, weights,
             num_target_classes: int, seed: int = 0) -> EvalReport:
    rs = forward_source(model, source.features, "eval")
    rt = forward_target(model, target.features, "eval")
    shared, outlier = weight_split_report(weights, num_target_classes)
    return EvalReport(
        target_accuracy=float(np.mean(rt.probs.value.argmax(1) == target.labels)),
        proxy_a_distance=proxy_a_distance(rs.features.value, rt.corrected.value, seed=seed),
        layer_stats=layer_response_stats(model, source.features, target.features),
        shared_weight_mean=shared,
        outlier_weight_mean=outlier,
    )


def dump_features(model: DrcnModel, ds: Dataset, path, domain: str) -> Path:
    """Write corrected features with predicted label, true label and domain tag."""
    if domain not in ("source", "target"):
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    fwd = forward_target if domain == "target" else forward_source
    rec = fwd(model, ds.features, "eval")
    feats = rec.corrected.value
    pred = rec.probs.value.argmax(1)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"f{i}" for i in range(feats.shape[1])] + ["pred", "label", "domain"])
            for row, p, y in zip(feats, pred, ds.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(p), int(y), domain])
    except OSError as exc:
        raise OSError(f"cannot write feature dump to {path}: {exc}") from exc
    return path


def read_feature_dump(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    d = len(header) - 3
    feats = np.array([[float(v) for v in r[:d]] for r in rows]).reshape(len(rows), d)
    pred = np.array([int(r[d]) for r in rows])
    labels = np.array([int(r[d + 1]) for r in rows])
    return feats, pred, labels, [r[d + 2] for r in rows]
