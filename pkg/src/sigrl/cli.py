"""Batch front door: dataset synthesis, training, evaluation, gradient checks.

Flag resolution is flag > config file > SIGRL_SEED (seed only) > default.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(unreadable files, malformed containers, diverged training).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    Split,
    apply_spml_mask,
    gen_synthetic,
    read_dataset,
    split_zsl,
    write_dataset,
)
from .diagnostics import SUITE_NAMES, run_suite
from .errors import ConfigError, SigrlError
from .label_graph import GAT_ACTIVATIONS
from .losses import LOSS_MODES, SPML_MODES, LossConfig
from .metrics import EVAL_PROTOCOLS, evaluate
from .model import load_model
from .training import TrainConfig, fit

TRAIN_PROTOCOLS = ("gzsl", "zsl", "spml")
SPLIT_NAMES = {"train": Split.TRAIN, "val": Split.VAL, "test": Split.TEST}


# ---------------------------------------------------------------------------
# value casters (shared between flags and config-file entries)


def _int(text) -> int:
    try:
        return int(str(text))
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _float(text) -> float:
    try:
        return float(str(text))
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def _bool(text) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _ids(text) -> tuple[int, ...]:
    """Comma-separated label ids; empty means none."""
    parts = [p for p in str(text).split(",") if p.strip()]
    return tuple(_int(p.strip()) for p in parts)


def _choice(options):
    def cast(text):
        value = str(text)
        if value not in options:
            raise ConfigError(f"value must be one of {options}, got {value!r}")
        return value

    return cast


def _path(text) -> str:
    return str(text)


# ---------------------------------------------------------------------------
# config resolution


def _read_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, spec: dict) -> dict:
    """Merge flags over config-file entries over defaults, all through one caster."""
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_values) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config file keys: {', '.join(unknown)}")
    resolved = {}
    for key, (cast, default) in spec.items():
        flag = getattr(args, key)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = cast(file_values[key])
        else:
            resolved[key] = default
    return resolved


def _resolve_seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("SIGRL_SEED")
    if env is None or not env.strip():
        return 0
    return _int(env.strip())


def _add_flags(parser: argparse.ArgumentParser, spec: dict) -> None:
    """Every spec key becomes a flag with a None default so absence is visible."""
    for key, (cast, _) in spec.items():
        flag = "--" + key.replace("_", "-")
        if cast is _bool:
            parser.add_argument(flag, nargs="?", const=True, default=None, type=_bool)
        else:
            parser.add_argument(flag, default=None, type=cast)


# ---------------------------------------------------------------------------
# synth


_SYNTH_SPEC = {
    "out": (_path, None),
    "classes": (_int, 8),
    "patches": (_int, 16),
    "dim": (_int, 32),
    "raw_dim": (_int, 512),
    "samples": (_int, 256),
    "noise": (_float, 0.0),
    "labels_min": (_int, 2),
    "labels_max": (_int, 3),
    "unseen": (_ids, ()),
    "seed": (_int, None),
}


def cmd_synth(args) -> int:
    cfg = _resolve(args, _SYNTH_SPEC)
    cfg["seed"] = _resolve_seed(cfg["seed"])
    if not cfg["out"]:
        raise ConfigError("synth needs --out (or out= in the config file)")
    dataset = gen_synthetic(
        classes=cfg["classes"],
        patches=cfg["patches"],
        dim=cfg["dim"],
        raw_dim=cfg["raw_dim"],
        samples=cfg["samples"],
        noise_sigma=cfg["noise"],
        labels_min=cfg["labels_min"],
        labels_max=cfg["labels_max"],
        seed=cfg["seed"],
        unseen_ids=cfg["unseen"],
    )
    write_dataset(dataset, cfg["out"])
    size = Path(cfg["out"]).stat().st_size
    counts = [int((s.labels == 1).sum()) for s in dataset.samples]
    histogram = " ".join(f"{n}:{counts.count(n)}" for n in sorted(set(counts)))
    print(f"wrote {cfg['out']} ({size} bytes)")
    print(
        f"classes={dataset.num_labels} patches={dataset.num_patches}"
        f" dim={dataset.embed_dim} raw_dim={dataset.raw_dim} samples={len(dataset.samples)}"
    )
    print(f"splits: train={len(dataset.train)} val={len(dataset.val)} test={len(dataset.test)}")
    print(f"positives per image: {histogram}")
    return 0


# ---------------------------------------------------------------------------
# train


_TRAIN_SPEC = {
    "data": (_path, None),
    "out_dir": (_path, "."),
    "seed": (_int, None),
    "epochs": (_int, 50),
    "batch_size": (_int, 16),
    "k": (_int, 16),
    "dim": (_int, None),  # label-graph latent width D'; defaults to D
    "lr": (_float, 1e-4),
    "min_lr": (_float, 1e-7),
    "weight_decay": (_float, 0.05),
    "loss": (_choice(LOSS_MODES), "ranking_distill"),
    "alpha_em": (_float, 0.2),
    "theta_pos": (_float, 0.95),
    "theta_neg": (_float, 0.05),
    "temperature": (_float, 1.0),
    "assume_negative": (_bool, False),
    "warmup_epochs": (_int, 1),
    "activation": (_choice(GAT_ACTIVATIONS), "elu"),
    "trainable_embeddings": (_bool, False),
    "score_enriched": (_bool, False),
    "val_protocol": (_choice(EVAL_PROTOCOLS), "gzsl"),
    "protocol": (_choice(TRAIN_PROTOCOLS), "gzsl"),
    "mask_seed": (_int, None),
    "unseen": (_ids, ()),
}


def _prepare_training_data(dataset: Dataset, cfg: dict) -> tuple[Dataset, int | None]:
    """Apply the protocol's supervision regime; returns (dataset, mask seed)."""
    protocol = cfg["protocol"]
    if protocol == "spml":
        if cfg["loss"] not in SPML_MODES:
            raise ConfigError(
                f"spml protocol needs a loss mode in {SPML_MODES}, got {cfg['loss']!r}"
            )
        mask_seed = cfg["mask_seed"] if cfg["mask_seed"] is not None else cfg["seed"]
        return apply_spml_mask(dataset, seed=mask_seed), mask_seed
    if cfg["loss"] in SPML_MODES:
        raise ConfigError(f"loss mode {cfg['loss']!r} needs --protocol spml (or --spml)")
    if protocol == "zsl":
        unseen = cfg["unseen"] or tuple(
            int(i) for i in np.nonzero(~dataset.label_space.seen_mask)[0]
        )
        if not unseen:
            raise ConfigError("zsl training needs unseen ids (--unseen or a dataset mask)")
        z = split_zsl(dataset, unseen)
        scrubbed = Dataset(
            label_space=z.label_space,
            samples=z.train + dataset.val + dataset.test,
        )
        return scrubbed, None
    return dataset, None


def cmd_train(args) -> int:
    cfg = _resolve(args, _TRAIN_SPEC)
    cfg["seed"] = _resolve_seed(cfg["seed"])
    if not cfg["data"]:
        raise ConfigError("train needs --data (or data= in the config file)")
    dataset = read_dataset(cfg["data"])
    dataset, mask_seed = _prepare_training_data(dataset, cfg)
    config = TrainConfig(
        seed=cfg["seed"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        k=cfg["k"],
        latent_dim=cfg["dim"],
        lr=cfg["lr"],
        min_lr=cfg["min_lr"],
        weight_decay=cfg["weight_decay"],
        loss=LossConfig(
            mode=cfg["loss"],
            alpha_em=cfg["alpha_em"],
            theta_pos=cfg["theta_pos"],
            theta_neg=cfg["theta_neg"],
            temperature=cfg["temperature"],
            assume_negative=cfg["assume_negative"],
        ),
        warmup_epochs=cfg["warmup_epochs"],
        activation=cfg["activation"],
        trainable_embeddings=cfg["trainable_embeddings"],
        score_uses_enriched=cfg["score_enriched"],
        val_protocol=cfg["val_protocol"],
    )
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "model.sigp"
    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        header = dict(cfg)
        header["type"] = "config"
        header["mask_seed"] = mask_seed
        header["unseen"] = list(cfg["unseen"])
        log.write(json.dumps(header) + "\n")

        def on_epoch(record):
            row = {
                "type": "epoch",
                "epoch": record.epoch,
                "loss": record.train_loss,
                "val_map": record.val_map,
                "lr": record.lr,
            }
            log.write(json.dumps(row) + "\n")
            log.flush()
            val = "-" if record.val_map is None else f"{record.val_map:.4f}"
            print(
                f"epoch {record.epoch:3d} loss {record.train_loss:.6f}"
                f" val_map {val} lr {record.lr:.3e}"
            )

        report = fit(dataset, config, checkpoint_path=checkpoint, log_fn=on_epoch)
        log.write(
            json.dumps(
                {
                    "type": "summary",
                    "best_epoch": report.best_epoch,
                    "best_val_map": report.best_val_map,
                    "checkpoint": str(checkpoint),
                }
            )
            + "\n"
        )
    best = "-" if report.best_val_map is None else f"{report.best_val_map:.4f}"
    print(f"best epoch {report.best_epoch} (val_map {best})")
    print(f"wrote {checkpoint}")
    print(f"wrote {log_path}")
    return 0


# ---------------------------------------------------------------------------
# eval


_EVAL_SPEC = {
    "data": (_path, None),
    "checkpoint": (_path, None),
    "out_dir": (_path, "."),
    "protocol": (_choice(EVAL_PROTOCOLS), "gzsl"),
    "split": (_choice(tuple(SPLIT_NAMES)), "test"),
    "ks": (_ids, (3, 5)),
    "seed": (_int, None),  # accepted for uniformity; evaluation is deterministic
}


def cmd_eval(args) -> int:
    cfg = _resolve(args, _EVAL_SPEC)
    if not cfg["data"] or not cfg["checkpoint"]:
        raise ConfigError("eval needs --data and --checkpoint")
    dataset = read_dataset(cfg["data"])
    params = load_model(cfg["checkpoint"])
    if (
        params.num_labels != dataset.num_labels
        or params.embed_dim != dataset.embed_dim
        or params.adapter.raw_dim != dataset.raw_dim
    ):
        raise ConfigError(
            f"checkpoint {cfg['checkpoint']} holds (labels={params.num_labels},"
            f" dim={params.embed_dim}, raw_dim={params.adapter.raw_dim}) but dataset"
            f" {cfg['data']} holds (labels={dataset.num_labels}, dim={dataset.embed_dim},"
            f" raw_dim={dataset.raw_dim})"
        )
    report = evaluate(
        params,
        dataset,
        protocol=cfg["protocol"],
        ks=cfg["ks"],
        split=SPLIT_NAMES[cfg["split"]],
    )
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "protocol": cfg["protocol"],
        "split": cfg["split"],
        "dataset": cfg["data"],
        "checkpoint": cfg["checkpoint"],
        "map": report.map,
        "topk": {
            str(k): {"precision": s.precision, "recall": s.recall, "f1": s.f1}
            for k, s in sorted(report.topk.items())
        },
        "per_class_ap": {name: ap for name, ap in report.per_class_ap},
        "skipped_classes": list(report.skipped_classes),
    }
    json_path = out_dir / "metrics.json"
    json_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in report.flat().items():
            writer.writerow([key, repr(value)])
    print(f"map={report.map:.6f} over {len(report.per_class_ap)} labels ({cfg['protocol']})")
    for k, stats in sorted(report.topk.items()):
        print(f"top{k}: precision={stats.precision:.4f} recall={stats.recall:.4f} f1={stats.f1:.4f}")
    print(f"wrote {json_path}")
    print(f"wrote {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args.seed)
    rows = run_suite(args.scope, seed=seed)
    width = max(len(check) for check, _ in rows)
    name_width = max(
        (len(name) for _, report in rows for name in report.errors), default=10
    )
    failures = 0
    print(f"{'check':<{width}} {'input':<{name_width}} {'max_rel_err':>12} {'tol':>8} status")
    for check, report in rows:
        for name in sorted(report.errors):
            err = report.errors[name]
            ok = err <= report.tol
            print(
                f"{check:<{width}} {name:<{name_width}} {err:12.3e}"
                f" {report.tol:8.0e} {'pass' if ok else 'FAIL'}"
            )
        if report.note:
            print(f"{check:<{width}} {'<forward>':<{name_width}} {report.note}")
        failures += 0 if report.passed else 1
    total = len(rows)
    if failures:
        print(f"{failures} of {total} checks failed in scope {args.scope!r}")
        return 2
    print(f"all {total} checks passed in scope {args.scope!r}")
    return 0


# ---------------------------------------------------------------------------
# wiring


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1, not argparse's 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sigrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic dataset file")
    synth.add_argument("--config", default=None, help="key=value file; flags override it")
    _add_flags(synth, _SYNTH_SPEC)
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="fit a model and write checkpoint + log")
    train.add_argument("--config", default=None, help="key=value file; flags override it")
    _add_flags(train, _TRAIN_SPEC)
    train.add_argument(
        "--spml",
        action="store_const",
        const="spml",
        dest="protocol",
        help="shorthand for --protocol spml",
    )
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint against a dataset")
    ev.add_argument("--config", default=None, help="key=value file; flags override it")
    _add_flags(ev, _EVAL_SPEC)
    ev.set_defaults(func=cmd_eval)

    grad = sub.add_parser("gradcheck", help="finite-difference audit of one suite")
    grad.add_argument("--scope", default="full", choices=SUITE_NAMES)
    grad.add_argument("--seed", default=None, type=_int)
    grad.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SigrlError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
