"""SGD with momentum, grouped learning rates, and the DRCN epoch loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, paired_batches
from .kernels import KernelBank, jmmd_linear
from .losses import (LossBreakdown, LossConfig, compute_class_weights, cross_entropy, harden,
                     objective, total_loss, weighted_class_loss)
from .network import DrcnModel, forward_source, forward_target, param_group

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "no_domain", "no_class", "uniform_w", "no_rcb")
GROUP_MULTIPLIERS = {"backbone": 1.0, "task_layer": 1.0, "classifier": 10.0, "residual_block": 0.1}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 32
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 1
    ablation: str = "full"

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")

    def effective_loss(self) -> LossConfig:
        if self.ablation == "no_domain":
            return replace(self.loss, alpha=0.0)
        if self.ablation == "no_class":
            return replace(self.loss, beta=0.0)
        return self.loss

    @property
    def pins_weights(self) -> bool:
        return self.ablation == "uniform_w" or self.loss.traditional_mode


@dataclass
class OptimizerState:
    momentum: float
    total_steps: int
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    weights_used: np.ndarray
    weights: np.ndarray
    target_accuracy: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[LossBreakdown] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)


def lr_at(base_lr: float, progress: float) -> float:
    """Inverse-decay annealing: base_lr * (1 + 10 p) ** -0.75."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    return base_lr * (1.0 + 10.0 * progress) ** -0.75


def group_lr(group: str, lr: float) -> float:
    try:
        return GROUP_MULTIPLIERS[group] * lr
    except KeyError:
        raise ValueError(f"unknown parameter group {group!r}") from None


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      state: OptimizerState, lr) -> None:
    """Heavy-ball update in place: v <- mu v + g; theta <- theta - lr v.

    ``lr`` is a float or a mapping from parameter name to its learning rate.
    """
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        v = state.velocity.get(name)
        v = g.copy() if v is None else state.momentum * v + g
        state.velocity[name] = v
        eta = lr[name] if isinstance(lr, dict) else lr
        params[name] = theta - eta * v
    state.step += 1


def _target_probs(model: DrcnModel, target: Dataset) -> np.ndarray:
    return forward_target(model, target.features, "eval").probs.value


def _refresh_weights(model: DrcnModel, target: Dataset, cfg: TrainConfig, num_classes: int):
    probs = _target_probs(model, target)
    if cfg.pins_weights:
        w = np.ones(num_classes)
    else:
        w = compute_class_weights(harden(probs) if cfg.loss.label_mode == "hard" else probs)
    acc = float(np.mean(probs.argmax(1) == target.labels))
    return w, acc


def _banks(model: DrcnModel, xs: np.ndarray, xt: np.ndarray) -> tuple[KernelBank, KernelBank]:
    rs = forward_source(model, xs, "eval")
    rt = forward_target(model, xt, "eval")
    feats = np.vstack([rs.features.value, rt.corrected.value])
    probs = np.vstack([rs.probs.value, rt.probs.value])
    return KernelBank.from_samples(feats), KernelBank.from_samples(probs)


def train_step(model: DrcnModel, xs, ys, xt, w, banks, loss_cfg: LossConfig):
    """One forward/backward pass; returns (breakdown, grads by parameter name)."""
    leaves = model.bind()
    rs = forward_source(model, xs, "train", leaves)
    rt = forward_target(model, xt, "train", leaves)
    l_s = cross_entropy(rs.probs, ys)
    zero = ad.const(0.0)
    l_domain = (jmmd_linear(rs.features, rs.probs, rt.corrected, rt.probs, *banks)
                if loss_cfg.alpha > 0 else zero)
    l_class = (weighted_class_loss(rs.features, ys, rt.corrected, rt.probs.value, w, banks[0],
                                   loss_cfg.label_mode)
               if loss_cfg.beta > 0 else zero)
    breakdown = total_loss(l_s.item(), l_domain.item(), l_class.item(), loss_cfg)
    root = objective(l_s, l_domain, l_class, loss_cfg)
    names = [n for n in leaves if model.use_residual or param_group(n) != "residual_block"]
    raw = ad.backward(root, [leaves[n] for n in names])
    return breakdown, {n: raw[id(leaves[n])] for n in names}


def _mean_breakdown(items: list[LossBreakdown]) -> LossBreakdown:
    arr = np.array([[b.l_s, b.l_domain, b.l_class, b.total] for b in items])
    return LossBreakdown(*(float(v) for v in arr.mean(0)))


def train(model: DrcnModel, source: Dataset, target: Dataset,
          cfg: TrainConfig) -> tuple[DrcnModel, History]:
    """Train a copy of ``model``; target labels are used only for reporting accuracy."""
    if source.dim != model.arch.input_dim or target.dim != model.arch.input_dim:
        raise ValueError(f"data dimension ({source.dim}/{target.dim}) does not match the model "
                         f"input ({model.arch.input_dim})")
    if source.num_classes != model.arch.num_classes:
        raise ValueError(f"source has {source.num_classes} classes, model {model.arch.num_classes}")
    model = model.copy()
    model.use_residual = cfg.ablation != "no_rcb"
    loss_cfg = cfg.effective_loss()
    c = model.arch.num_classes
    steps_per_epoch = max(len(source), len(target)) // cfg.batch_size
    state = OptimizerState(cfg.momentum, cfg.epochs * steps_per_epoch)
    history = History()
    w = np.ones(c)
    for epoch in range(cfg.epochs):
        batches = paired_batches(len(source), len(target), cfg.batch_size, cfg.seed, epoch)
        si, ti = batches[0]
        banks = _banks(model, source.features[si], target.features[ti])
        step_losses = []
        for si, ti in batches:
            try:
                breakdown, grads = train_step(model, source.features[si], source.labels[si],
                                              target.features[ti], w, banks, loss_cfg)
            except (FloatingPointError, ValueError) as exc:
                raise TrainingError(f"non-finite loss at step {state.step}: {exc}") from exc
            eta = lr_at(cfg.base_lr, state.step / state.total_steps)
            lrs = {n: group_lr(param_group(n), eta) for n in grads}
            sgd_momentum_step(model.params, grads, state, lrs)
            step_losses.append(breakdown)
        history.steps.extend(step_losses)
        w_used = w
        w, acc = _refresh_weights(model, target, cfg, c)
        history.epochs.append(EpochRecord(epoch, _mean_breakdown(step_losses), w_used, w, acc))
        logger.info("epoch %d total=%.4f acc=%.4f", epoch, history.epochs[-1].losses.total, acc)
    return model, history
