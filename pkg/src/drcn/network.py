"""The DRCN model: MLP backbone, task layer, residual correction block, classifier.

Source rows take backbone -> task layer -> classifier. Target rows additionally
pass through the residual block, whose output is added to their task features
before the (shared) classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Node, ShapeError

GROUPS = ("backbone", "task_layer", "residual_block", "classifier")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    num_classes: int
    hidden: tuple[int, ...] = (64, 64)
    feature_dim: int = 32
    bottleneck: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, self.num_classes, self.feature_dim, *self.hidden)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {self}")
        if self.bottleneck is not None and self.bottleneck < 1:
            raise ValueError(f"bottleneck must be >= 1, got {self.bottleneck}")

    @property
    def block_width(self) -> int:
        if self.bottleneck is not None:
            return self.bottleneck
        return max(self.feature_dim // 2, 4)


@dataclass
class DrcnModel:
    """Parameters (ordered by name) plus the block's batch-norm statistics."""

    arch: Architecture
    params: dict[str, np.ndarray]
    bn: BatchNormState
    use_residual: bool = True

    def copy(self) -> "DrcnModel":
        return DrcnModel(self.arch, {k: v.copy() for k, v in self.params.items()},
                         self.bn.copy(), self.use_residual)

    def bind(self) -> dict[str, Node]:
        """Fresh differentiable leaves for one forward/backward pass."""
        return {name: ad.param(value) for name, value in self.params.items()}

    def n_hidden(self) -> int:
        return len(self.arch.hidden)


def param_group(name: str) -> str:
    if name.startswith("backbone."):
        return "backbone"
    if name.startswith("task."):
        return "task_layer"
    if name.startswith("residual."):
        return "residual_block"
    if name.startswith("classifier."):
        return "classifier"
    raise KeyError(f"parameter {name!r} belongs to no group")


def _uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_model(arch: Architecture, seed: int) -> DrcnModel:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    width = arch.input_dim
    for i, h in enumerate(arch.hidden):
        params[f"backbone.{i}.weight"] = _uniform(rng, width, h)
        params[f"backbone.{i}.bias"] = np.zeros((1, h))
        width = h
    d_f, d_b = arch.feature_dim, arch.block_width
    params["task.weight"] = _uniform(rng, width, d_f)
    params["task.bias"] = np.zeros((1, d_f))
    params["residual.fc1.weight"] = _uniform(rng, d_f, d_b)
    params["residual.fc1.bias"] = np.zeros((1, d_b))
    params["residual.bn.gamma"] = np.ones((1, d_b))
    params["residual.bn.beta"] = np.zeros((1, d_b))
    # zero fc2: the block starts as the identity correction
    params["residual.fc2.weight"] = np.zeros((d_b, d_f))
    params["residual.fc2.bias"] = np.zeros((1, d_f))
    params["classifier.weight"] = _uniform(rng, d_f, arch.num_classes)
    params["classifier.bias"] = np.zeros((1, arch.num_classes))
    return DrcnModel(arch, params, BatchNormState(d_b))


@dataclass
class ForwardRecord:
    features: Node
    corrected: Node
    logits: Node
    probs: Node
    delta: Optional[Node] = None
    leaves: dict[str, Node] = field(default_factory=dict, repr=False)


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def _affine(x: Node, p: dict[str, Node], prefix: str) -> Node:
    return ad.add(ad.matmul(x, p[f"{prefix}.weight"]), p[f"{prefix}.bias"])


def _task_features(model: DrcnModel, x, p: dict[str, Node]) -> Node:
    x = ad.as_node(np.asarray(x, dtype=np.float64) if not isinstance(x, Node) else x)
    if x.shape[1] != model.arch.input_dim:
        raise ShapeError(f"input has {x.shape[1]} features, model expects {model.arch.input_dim}")
    h = x
    for i in range(model.n_hidden()):
        h = ad.relu(_affine(h, p, f"backbone.{i}"))
    return _affine(h, p, "task")


def _head(features: Node, corrected: Node, p, delta=None) -> ForwardRecord:
    logits = _affine(corrected, p, "classifier")
    return ForwardRecord(features, corrected, logits, ad.softmax_rows(logits), delta, p)


def forward_source(model: DrcnModel, xs, mode: str = "eval",
                   leaves: Optional[dict[str, Node]] = None) -> ForwardRecord:
    _check_mode(mode)
    p = model.bind() if leaves is None else leaves
    f = _task_features(model, xs, p)
    return _head(f, f, p)


def residual_delta(model: DrcnModel, features: Node, p: dict[str, Node], train: bool) -> Node:
    h = _affine(features, p, "residual.fc1")
    h = ad.batch_norm(h, p["residual.bn.gamma"], p["residual.bn.beta"], model.bn, train)
    return _affine(ad.relu(h), p, "residual.fc2")


def forward_target(model: DrcnModel, xt, mode: str = "eval",
                   leaves: Optional[dict[str, Node]] = None) -> ForwardRecord:
    """Target path; in train mode this updates the block's running statistics."""
    train = _check_mode(mode)
    p = model.bind() if leaves is None else leaves
    f = _task_features(model, xt, p)
    if not model.use_residual:
        return _head(f, f, p)
    if train and f.shape[0] < 2:
        raise ValueError("forward_target in train mode needs a batch of at least 2 rows")
    delta = residual_delta(model, f, p, train)
    return _head(f, ad.add(f, delta), p, delta)


def predict(model: DrcnModel, x, domain: str = "target") -> np.ndarray:
    fwd = forward_target if domain == "target" else forward_source
    return fwd(model, x, "eval").probs.value.argmax(1)


CHECKPOINT_FORMAT = "drcn-checkpoint/1"


def to_checkpoint(model: DrcnModel) -> dict:
    """JSON-ready checkpoint: named parameter matrices as nested lists, in a stable order."""
    a = model.arch
    return {
        "format": CHECKPOINT_FORMAT,
        "architecture": {"input_dim": a.input_dim, "num_classes": a.num_classes,
                         "hidden": list(a.hidden), "feature_dim": a.feature_dim,
                         "bottleneck": a.block_width},
        "use_residual": model.use_residual,
        "params": [{"name": k, "shape": list(v.shape), "values": v.tolist()}
                   for k, v in model.params.items()],
        "batch_norm": {"running_mean": model.bn.running_mean.tolist(),
                       "running_var": model.bn.running_var.tolist()},
    }


def from_checkpoint(blob: dict) -> DrcnModel:
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint (format {blob.get('format')!r})")
    a = blob["architecture"]
    arch = Architecture(a["input_dim"], a["num_classes"], tuple(a["hidden"]),
                        a["feature_dim"], a["bottleneck"])
    model = init_model(arch, 0)
    loaded = {p["name"]: np.array(p["values"], dtype=np.float64).reshape(p["shape"])
              for p in blob["params"]}
    if set(loaded) != set(model.params):
        raise ValueError(f"checkpoint parameters {sorted(loaded)} do not match the architecture")
    for name, value in loaded.items():
        if value.shape != model.params[name].shape:
            raise ShapeError(f"checkpoint {name} has shape {value.shape}, "
                             f"expected {model.params[name].shape}")
        model.params[name] = value
    model.bn.running_mean = np.array(blob["batch_norm"]["running_mean"], dtype=np.float64)
    model.bn.running_var = np.array(blob["batch_norm"]["running_var"], dtype=np.float64)
    model.use_residual = bool(blob["use_residual"])
    return model
