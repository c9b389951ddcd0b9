"""Command-line runner: ``drcn gen-data``, ``drcn train``, ``drcn eval``.

Exit status is 0 on success, 1 on a validation error and 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, describe_keys, load_config
from .data import DataError, Dataset, generate_shifted_blobs, load_csv, save_csv
from .evaluation import EvalReport, dump_features, evaluate, weight_split_report
from .losses import compute_class_weights
from .network import Architecture, forward_target, from_checkpoint, init_model, to_checkpoint
from .training import ABLATIONS, History, TrainingError, train

logger = logging.getLogger("drcn")

HISTORY_HEADER = ["epoch", "l_s", "l_domain", "l_class", "total", "target_acc",
                  "shared_weight_mean", "outlier_weight_mean"]
AGGREGATE_KEYS = ("target_accuracy", "proxy_a_distance", "shared_weight_mean",
                  "outlier_weight_mean")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def load_datasets(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset, int]:
    """(source, target, C_t) from the CSVs in the config or from the generator."""
    if cfg.source_csv is not None:
        source = load_csv(cfg.source_csv)
        target = load_csv(cfg.target_csv, num_classes=source.num_classes)
        c_t = cfg.num_target_classes or int(target.labels.max()) + 1
        return source, target, c_t
    data_seed = cfg.data_seed if cfg.data_seed is not None else seed
    source, target = generate_shifted_blobs(cfg.shift, data_seed)
    return source, target, cfg.num_target_classes or cfg.shift.num_target_classes


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def history_rows(history: History, c_t: int) -> list[list]:
    rows = []
    for rec in history.epochs:
        shared, outlier = weight_split_report(rec.weights, c_t)
        b = rec.losses
        rows.append([rec.epoch, b.l_s, b.l_domain, b.l_class, b.total, rec.target_accuracy,
                     shared, outlier])
    return rows


def write_history(path: Path, rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for row in rows:
            writer.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])


def _mean_rows(per_seed: list[list[list]]) -> list[list]:
    out = []
    for epoch_rows in zip(*per_seed):
        row = [epoch_rows[0][0]]
        for col in range(1, len(HISTORY_HEADER)):
            vals = [r[col] for r in epoch_rows]
            row.append(None if any(v is None for v in vals) else float(np.mean(vals)))
        out.append(row)
    return out


def aggregate(per_seed_reports: list[dict]) -> dict:
    agg = {}
    for key in AGGREGATE_KEYS:
        vals = [r[key] for r in per_seed_reports]
        if any(v is None for v in vals):
            agg[key] = None
            continue
        arr = np.array(vals, dtype=np.float64)
        agg[key] = {"mean": float(arr.mean()),
                    "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}
    return agg


def _config_echo(cfg: ExperimentConfig, ablation: str) -> dict:
    t = cfg.train
    return {
        "data": {"source_csv": str(cfg.source_csv) if cfg.source_csv else None,
                 "target_csv": str(cfg.target_csv) if cfg.target_csv else None,
                 "seed": cfg.data_seed, **{k: (list(v) if isinstance(v, tuple) else v)
                                           for k, v in asdict(cfg.shift).items()}},
        "model": {"hidden": list(cfg.hidden), "feature_dim": cfg.feature_dim,
                  "bottleneck": cfg.bottleneck},
        "train": {"base_lr": t.base_lr, "momentum": t.momentum, "epochs": t.epochs,
                  "batch_size": t.batch_size, "seeds": list(cfg.seeds), "ablation": ablation},
        "loss": asdict(t.loss),
        "eval": {"pad_seed": cfg.pad_seed, "num_target_classes": cfg.num_target_classes,
                 "dump_features": cfg.dump_features},
    }


def run_seed(cfg: ExperimentConfig, seed: int, ablation: str, out_dir: Path) -> tuple[dict, list]:
    source, target, c_t = load_datasets(cfg, seed)
    arch = Architecture(source.dim, source.num_classes, cfg.hidden, cfg.feature_dim,
                        cfg.bottleneck)
    model = init_model(arch, seed)
    trained, history = train(model, source, target, cfg.train_config(seed, ablation))
    report = evaluate(trained, source, target, history.epochs[-1].weights, c_t, cfg.pad_seed)
    seed_dir = out_dir / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    rows = history_rows(history, c_t)
    write_history(seed_dir / "history.csv", rows)
    (seed_dir / "checkpoint.json").write_text(json.dumps(to_checkpoint(trained)))
    save_csv(source, seed_dir / "source.csv")
    save_csv(target, seed_dir / "target.csv")
    if cfg.dump_features:
        dump_features(trained, source, seed_dir / "features_source.csv", "source")
        dump_features(trained, target, seed_dir / "features_target.csv", "target")
    last = history.epochs[-1]
    entry = {
        "seed": seed,
        "report": report.to_dict(),
        "history": {"epochs": len(history), "final_losses": asdict(last.losses),
                    "final_weights": last.weights.tolist(),
                    "final_target_accuracy": last.target_accuracy},
    }
    return entry, rows


def cmd_gen_data(config_path, out_dir) -> int:
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.data_seed if cfg.data_seed is not None else cfg.seeds[0]
    source, target = generate_shifted_blobs(cfg.shift, seed)
    save_csv(source, out / "source.csv")
    save_csv(target, out / "target.csv")
    logger.info("wrote %d source and %d target rows to %s", len(source), len(target), out)
    return EXIT_OK


def _check_compat(cfg: ExperimentConfig):
    source, target, _ = load_datasets(cfg, cfg.seeds[0])
    if source.dim != target.dim:
        raise DataError(f"source has {source.dim} features but target has {target.dim}")


def cmd_train(config_path, out_dir, seeds=None, ablation=None) -> int:
    cfg = load_config(config_path)
    if seeds:
        cfg.seeds = tuple(seeds)
    ablation = ablation or cfg.train.ablation
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {', '.join(ABLATIONS)}")
    _check_compat(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    entries, all_rows = [], []
    for seed in cfg.seeds:
        logger.info("seed %d (%s)", seed, ablation)
        entry, rows = run_seed(cfg, seed, ablation, out)
        entries.append(entry)
        all_rows.append(rows)
    write_history(out / "history.csv", _mean_rows(all_rows))
    manifest = {
        "config": _config_echo(cfg, ablation),
        "seeds": list(cfg.seeds),
        "per_seed": entries,
        "aggregate": aggregate([e["report"] for e in entries]),
        "wall_clock_seconds": time.perf_counter() - t0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return EXIT_OK


def cmd_eval(checkpoint, dataset_path, out_dir, source_path=None, num_target_classes=None,
             pad_seed=0) -> int:
    ckpt = Path(checkpoint)
    if not ckpt.is_file():
        raise ConfigError(f"{ckpt}: no such checkpoint")
    try:
        model = from_checkpoint(json.loads(ckpt.read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{ckpt}: malformed checkpoint ({exc})") from None
    c = model.arch.num_classes
    target = load_csv(dataset_path, num_classes=c) if Path(dataset_path).is_file() else None
    if target is None:
        raise ConfigError(f"{dataset_path}: no such dataset")
    if target.dim != model.arch.input_dim:
        raise ConfigError(f"dataset has {target.dim} features, checkpoint expects "
                          f"{model.arch.input_dim}")
    source = load_csv(source_path, num_classes=c) if source_path else target
    if source.dim != model.arch.input_dim:
        raise ConfigError(f"source has {source.dim} features, checkpoint expects "
                          f"{model.arch.input_dim}")
    weights = compute_class_weights(forward_target(model, target.features, "eval").probs)
    c_t = num_target_classes or int(target.labels.max()) + 1
    report: EvalReport = evaluate(model, source, target, weights, c_t, pad_seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = report.to_dict()
    blob["class_weights"] = weights.tolist()
    blob["notes"] = ("proxy_a_distance is unclamped and may be negative; "
                     + ("source and target are the same file" if source_path is None else
                        f"source file {source_path}"))
    (out / "eval_report.json").write_text(json.dumps(blob, indent=2))
    print(json.dumps({"target_accuracy": report.target_accuracy}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drcn", description="Residual-correction partial domain adaptation.",
                     epilog="config keys:\n" + describe_keys(),
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write source.csv and target.csv from the generator",
                       epilog="config keys:\n" + describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one model per seed and write a run manifest",
                       epilog="config keys:\n" + describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",") if v.strip()],
                   help="comma separated seeds, overrides [train] seeds")
    t.add_argument("--ablation", choices=ABLATIONS)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="target CSV")
    e.add_argument("--out", required=True)
    e.add_argument("--source", help="source CSV for the A-distance and layer statistics")
    e.add_argument("--num-target-classes", type=int)
    e.add_argument("--pad-seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args.config, args.out)
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seeds, args.ablation)
        return cmd_eval(args.checkpoint, args.data, args.out, args.source,
                        args.num_target_classes, args.pad_seed)
    except (ConfigError, DataError) as exc:
        print(f"drcn: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, OSError, ValueError) as exc:
        print(f"drcn: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
