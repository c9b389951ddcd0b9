"""Source cross-entropy, class weights, weighted class-wise alignment, total objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .kernels import KernelBank, classwise_discrepancies

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    beta: float = 0.05
    label_mode: str = "soft"
    traditional_mode: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.label_mode not in ("soft", "hard"):
            raise ValueError(f"label_mode must be 'soft' or 'hard', got {self.label_mode!r}")


@dataclass(frozen=True)
class LossBreakdown:
    l_s: float
    l_domain: float
    l_class: float
    total: float


def cross_entropy(probs, labels):
    """Mean of -log(max(p[label], 1e-12)) over rows."""
    diff = isinstance(probs, Node)
    p = ad.as_node(probs)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, c = p.shape
    if labels.size != n:
        raise ValueError(f"{n} probability rows but {labels.size} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.sum_rows(ad.mul(p, ad.const(onehot)))
    loss = ad.scale(ad.sum_all(ad.log(ad.clamp_min(picked, LOG_FLOOR))), -1.0 / n)
    return loss if diff else loss.item()


def _as_array(x) -> np.ndarray:
    return np.asarray(x.value if isinstance(x, Node) else x, dtype=np.float64)


def compute_class_weights(target_probs) -> np.ndarray:
    """Column mean of the target predictions, divided by its largest entry."""
    p = _as_array(target_probs)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("compute_class_weights needs at least one probability row")
    if np.abs(p.sum(1) - 1.0).max() > 1e-6:
        raise ValueError("target prediction rows must sum to 1")
    w = p.mean(0)
    return w / w.max()


def harden(probs) -> np.ndarray:
    p = _as_array(probs)
    out = np.zeros_like(p)
    out[np.arange(p.shape[0]), p.argmax(1)] = 1.0  # argmax takes the lowest index on ties
    return out


def weighted_class_loss(fs, ys, ft, pt, w, bank: KernelBank, label_mode: str = "soft"):
    """Sum over classes of w[k] times the class-k MK-MMD; skipped classes add 0.

    ``pt`` and ``w`` act as constants; gradients reach only the features.
    """
    pt = _as_array(pt)
    if label_mode == "hard":
        pt = harden(pt)
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size != pt.shape[1]:
        raise ValueError(f"weight vector has {w.size} entries, expected {pt.shape[1]}")
    values, valid = classwise_discrepancies(fs, ys, ft, pt, bank)
    wv = np.where(valid, w, 0.0)
    if isinstance(values, Node):
        return ad.sum_all(ad.mul(values, ad.const(wv[None, :])))
    return float(values @ wv)


def total_loss(l_s: float, l_domain: float, l_class: float, cfg: LossConfig) -> LossBreakdown:
    for name, v in (("l_s", l_s), ("l_domain", l_domain), ("l_class", l_class)):
        if not math.isfinite(v):
            raise ValueError(f"non-finite loss component {name} = {v}")
    total = l_s + cfg.alpha * l_domain + cfg.beta * l_class
    return LossBreakdown(float(l_s), float(l_domain), float(l_class), float(total))


def objective(l_s: Node, l_domain: Node, l_class: Node, cfg: LossConfig) -> Node:
    """Differentiable counterpart of :func:`total_loss`."""
    return l_s + ad.scale(l_domain, cfg.alpha) + ad.scale(l_class, cfg.beta)
