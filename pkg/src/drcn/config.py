"""Experiment configuration: an INI file with [data], [model], [train], [loss], [eval]."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .data import ShiftSpec
from .losses import LossConfig
from .training import ABLATIONS, TrainConfig


class ConfigError(ValueError):
    pass


def _int(s):
    return int(s)


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _floats(s):
    return tuple(_float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _str(s):
    return s.strip()


# section -> key -> (parser, description)
SCHEMA = {
    "data": {
        "source_csv": (_str, "path to a source CSV (f0..,label); overrides the generator"),
        "target_csv": (_str, "path to a target CSV; required together with source_csv"),
        "seed": (_int, "generator seed; by default each run uses its own run seed"),
        "num_source_classes": (_int, "C_s, clusters in the source domain (10)"),
        "num_target_classes": (_int, "C_t, leading clusters present in the target (5)"),
        "source_per_class": (_int, "source samples per class (200)"),
        "target_per_class": (_int, "target samples per class (100)"),
        "dim": (_int, "input dimension, >= 2 (2)"),
        "angle_degrees": (_float, "target rotation in the f0/f1 plane (15)"),
        "translation": (_floats, "target translation, comma separated, zero padded (1,1)"),
        "noise_scale": (_float, "cluster standard deviation (0.6)"),
        "radius": (_float, "radius of the circle of cluster means (5)"),
    },
    "model": {
        "hidden": (_ints, "backbone hidden widths, comma separated (64,64)"),
        "feature_dim": (_int, "task-specific feature dimension d_f (32)"),
        "bottleneck": (_int, "residual block width (max(d_f/2, 4))"),
    },
    "train": {
        "base_lr": (_float, "base learning rate before annealing (0.01)"),
        "momentum": (_float, "SGD momentum (0.9)"),
        "epochs": (_int, "training epochs (60)"),
        "batch_size": (_int, "per-domain batch size, even (32)"),
        "seeds": (_ints, "run seeds, comma separated (1,2,3)"),
        "ablation": (_str, f"one of {', '.join(ABLATIONS)} (full)"),
    },
    "loss": {
        "alpha": (_float, "weight of the joint domain term (0.1; 1.5 in traditional mode)"),
        "beta": (_float, "weight of the class-wise term (0.05)"),
        "label_mode": (_str, "soft or hard (soft)"),
        "traditional_mode": (_bool, "pin class weights to 1 for identical label spaces (false)"),
    },
    "eval": {
        "pad_seed": (_int, "split seed of the proxy A-distance probe (0)"),
        "num_target_classes": (_int, "C_t for the shared/outlier weight split"),
        "dump_features": (_bool, "write per-seed feature CSVs (true)"),
    },
}


def describe_keys() -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, desc) in keys.items():
            lines.append(f"  {key:<20} {desc}")
    return "\n".join(lines)


@dataclass
class ExperimentConfig:
    shift: ShiftSpec = field(default_factory=lambda: ShiftSpec())
    data_seed: Optional[int] = None
    source_csv: Optional[Path] = None
    target_csv: Optional[Path] = None
    hidden: tuple[int, ...] = (64, 64)
    feature_dim: int = 32
    bottleneck: Optional[int] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (1, 2, 3)
    pad_seed: int = 0
    num_target_classes: Optional[int] = None
    dump_features: bool = True
    raw: dict = field(default_factory=dict)

    def train_config(self, seed: int, ablation: Optional[str] = None) -> TrainConfig:
        return replace(self.train, seed=seed, ablation=ablation or self.train.ablation)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(parser)


def parse_config(parser: configparser.ConfigParser) -> ExperimentConfig:
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key '{key}' in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw)
            except ValueError:
                raise ConfigError(f"invalid value {raw!r} for '{key}' in [{section}]") from None
    return build_config(values)


def build_config(values: dict[str, dict]) -> ExperimentConfig:
    d, m, t, lo, e = (values.get(s, {}) for s in ("data", "model", "train", "loss", "eval"))
    try:
        shift = ShiftSpec(
            num_source_classes=d.get("num_source_classes", 10),
            num_target_classes=d.get("num_target_classes", 5),
            source_per_class=d.get("source_per_class", 200),
            target_per_class=d.get("target_per_class", 100),
            dim=d.get("dim", 2),
            angle=math.radians(d.get("angle_degrees", 15.0)),
            translation=d.get("translation", (1.0, 1.0)),
            noise_scale=d.get("noise_scale", 0.6),
            radius=d.get("radius", 5.0),
        )
        shift.validate()
        traditional = lo.get("traditional_mode", False)
        loss = LossConfig(alpha=lo.get("alpha", 1.5 if traditional else 0.1),
                          beta=lo.get("beta", 0.05),
                          label_mode=lo.get("label_mode", "soft"),
                          traditional_mode=traditional)
        seeds = t.get("seeds", (1, 2, 3))
        if not seeds:
            raise ConfigError("'seeds' in [train] must list at least one seed")
        train = TrainConfig(base_lr=t.get("base_lr", 0.01), momentum=t.get("momentum", 0.9),
                            epochs=t.get("epochs", 60), batch_size=t.get("batch_size", 32),
                            loss=loss, seed=seeds[0], ablation=t.get("ablation", "full"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if ("source_csv" in d) != ("target_csv" in d):
        raise ConfigError("'source_csv' and 'target_csv' in [data] must be given together")
    hidden = m.get("hidden", (64, 64))
    if any(h < 1 for h in hidden):
        raise ConfigError(f"'hidden' in [model] must be positive widths, got {hidden}")
    return ExperimentConfig(
        shift=shift,
        data_seed=d.get("seed"),
        source_csv=Path(d["source_csv"]) if "source_csv" in d else None,
        target_csv=Path(d["target_csv"]) if "target_csv" in d else None,
        hidden=hidden,
        feature_dim=m.get("feature_dim", 32),
        bottleneck=m.get("bottleneck"),
        train=train,
        seeds=seeds,
        pad_seed=e.get("pad_seed", 0),
        num_target_classes=e.get("num_target_classes"),
        dump_features=e.get("dump_features", True),
        raw={s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()}
             for s, kv in values.items()},
    )
