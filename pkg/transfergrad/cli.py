#!/usr/bin/env python3
"""
transfergrad command line.

  transfergrad gen-data --classes 8 --per-class 300 --size 16 --seed 7
  transfergrad train --config run.toml [--model cnn_a] [--epochs 0]
  transfergrad attack --surrogate cnn_a --family us_mm --r 0.5 --L 0.1 --H 0.75
  transfergrad eval --config run.toml --threads 4
  transfergrad sweep --param r --grid 0:0.8:0.1
  transfergrad report
  transfergrad pipeline --config run.toml --force

Every command prints the resolved configuration and master seed before it runs;
``--print-config`` prints them and exits. Exit codes: 0 ok, 2 configuration error,
3 data error, 4 numerical failure, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence

import dotenv
from omegaconf import DictConfig

from transfergrad import run_config as rc
from transfergrad import run_pipeline as rp
from transfergrad.datasets import read_manifest
from transfergrad.errors import ConfigError, TransferGradError
from transfergrad.utils.summaries import (
    print_ranked_summary,
    print_sweep_summary,
    print_transfer_matrix,
)

logger = logging.getLogger(__name__)


# -- Flag → config mapping -------------------------------------------------


def _dot(key: str, value: object) -> str:
    if isinstance(value, (list, tuple)):
        return f"{key}=[{','.join(str(v) for v in value)}]"
    if isinstance(value, bool):
        return f"{key}={str(value).lower()}"
    return f"{key}={value}"


_DATASET_FLAGS = {
    "classes": "classes",
    "per_class": "per_class",
    "size": "image_size",
    "channels": "channels",
    "noise": "noise",
    "contrast": "contrast",
    "attack_size": "attack_size",
}

_ATTACK_FLAGS = {
    "family": "family",
    "epsilon": "epsilon",
    "iterations": "iterations",
    "alpha": "alpha",
    "momentum": "momentum",
    "m_us": "m",
    "L": "L",
    "H": "H",
    "m_mix": "m_mix",
    "r": "r",
    "eta": "eta",
}


def attack_name(args: argparse.Namespace) -> str | None:
    return getattr(args, "attack_name", None) or getattr(args, "family", None)


def flag_overrides(args: argparse.Namespace) -> list[str]:
    """Dedicated flags as OmegaConf dot-list entries (applied after ``--set``)."""
    out: list[str] = []
    for flag, key in _DATASET_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out.append(_dot(f"dataset.{key}", value))
    if getattr(args, "threads", None) is not None:
        out.append(_dot("eval.threads", args.threads))
    if getattr(args, "seeds", None) is not None:
        out.append(_dot("eval.sweep_seeds", args.seeds))
    if getattr(args, "command", None) == "eval":
        for key in ("surrogates", "attacks", "victims"):
            value = getattr(args, key, None)
            if value:
                out.append(_dot(f"eval.{key}", value))
    if getattr(args, "command", None) == "attack":
        name = attack_name(args)
        for flag, key in _ATTACK_FLAGS.items():
            value = getattr(args, flag, None)
            if value is not None and name is not None:
                out.append(_dot(f"attacks.{name}.{key}", value))
    return out


def resolve_config(args: argparse.Namespace) -> DictConfig:
    cfg = rc.load_run_config(
        args.config, args.overrides or (), flag_overrides(args), seed=args.seed
    )
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        for name in getattr(args, "models", None) or list(cfg.models):
            if name in cfg.models:
                cfg.models[name].epochs = epochs
        rc.validate(cfg)
    return cfg


def print_resolved(cfg: DictConfig, command: str) -> None:
    print(f"# transfergrad {command}: resolved configuration")
    print(rc.to_yaml(cfg), end="")
    print(f"# master seed: {cfg.seed}")
    print(f"# config hash: {rc.config_hash(cfg)}")


# -- Commands --------------------------------------------------------------


def cmd_gen_data(cfg: DictConfig, args: argparse.Namespace) -> int:
    path = rp.generate_data(cfg, force=args.force)
    manifest = read_manifest(path.parent)
    print(f"Wrote {manifest['total_images']} images to {path.parent}")
    for split, count in manifest["counts"].items():
        print(f"   • {split}: {count}")
    return 0


def cmd_train(cfg: DictConfig, args: argparse.Namespace) -> int:
    splits = rp.load_splits(cfg)
    written = rp.train_models(cfg, splits, args.models, quiet=args.quiet)
    for name, path in written.items():
        print(f"{name}: {path} (metrics: {rp.metrics_path(cfg, name)})")
    return 0


def cmd_attack(cfg: DictConfig, args: argparse.Namespace) -> int:
    name = attack_name(args)
    if name is None:
        raise ConfigError("attack needs --attack NAME or --family FAMILY")
    splits = rp.load_splits(cfg)
    models = rp.load_models(cfg, [args.surrogate])
    path, batch = rp.attack_one(
        cfg,
        splits,
        models[args.surrogate],
        args.surrogate,
        name,
        threads=cfg.eval.threads,
        quiet=args.quiet,
    )
    print(f"Archive: {path}")
    print(
        f"   images={batch.telemetry.images} queries={batch.telemetry.queries} "
        f"max_linf={batch.max_linf:.6f} ({batch.max_linf * 255:.3f}/255)"
    )
    return 0


def cmd_eval(cfg: DictConfig, args: argparse.Namespace) -> int:
    splits = rp.load_splits(cfg)
    models = rp.load_models(cfg)
    path, report = rp.evaluate(cfg, splits, models, threads=cfg.eval.threads, quiet=args.quiet)
    print(f"Transfer matrix: {len(report.rows)} rows -> {path}")
    for attack in report.metadata.get("attacks", []):
        print_transfer_matrix(report.rows, attack)
    _, ranked = rp.build_report(cfg, [path])
    print_ranked_summary(ranked)
    return 0


def cmd_sweep(cfg: DictConfig, args: argparse.Namespace) -> int:
    splits = rp.load_splits(cfg)
    models = rp.load_models(cfg)
    rows_path, summary_path, report = rp.sweep(
        cfg,
        splits,
        models,
        args.param,
        grid=args.grid,
        attack_name=args.attack_name,
        family=args.family,
        surrogate=args.surrogate,
        threads=cfg.eval.threads,
        quiet=args.quiet,
    )
    print(f"Sweep {args.param} over {len(report.grid)} values on {report.surrogate}")
    print(f"   rows: {rows_path}")
    print(f"   summary: {summary_path}")
    print_sweep_summary(report.summary())
    return 0


def cmd_report(cfg: DictConfig, args: argparse.Namespace) -> int:
    path, ranked = rp.build_report(cfg, args.inputs)
    print(f"Ranked summary -> {path}")
    print_ranked_summary(ranked)
    return 0


def cmd_pipeline(cfg: DictConfig, args: argparse.Namespace) -> int:
    out = rp.run_pipeline(cfg, force=args.force, quiet=args.quiet)
    print(f"Config: {out.config}")
    print(f"Transfer matrix: {out.transfer}")
    print(f"Ranked summary: {out.ranked}")
    print_ranked_summary(out.ranked_rows)
    return 0


COMMANDS: dict[str, Callable[[DictConfig, argparse.Namespace], int]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


# -- Parser ----------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="Run config (.toml or .yaml)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="Override a config value by dotted key (repeatable)",
    )
    p.add_argument("--seed", type=int, help="Master seed (else config, else TRANSFERGRAD_SEED)")
    p.add_argument(
        "--print-config", action="store_true", help="Print the resolved config and exit"
    )
    p.add_argument("--threads", type=int, help="Worker threads for attack crafting")
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="Warnings only, no progress bars")
    return p


def _attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", help="Attack family (fgsm, bim, mifgsm, ..., us_mm)")
    p.add_argument("--epsilon", type=float, help="Budget on the 0-255 scale")
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha", type=float, help="Step size on the 0-255 scale")
    p.add_argument("--momentum", type=float)
    p.add_argument("--m-us", dest="m_us", type=int, help="Scale copies")
    p.add_argument("--L", dest="L", type=float, help="Lowest scale factor")
    p.add_argument("--H", dest="H", type=float, help="Highest scale factor")
    p.add_argument("--m-mix", dest="m_mix", type=int, help="Mix images per scale copy")
    p.add_argument("--r", dest="r", type=float, help="Mix mask range")
    p.add_argument("--eta", type=float, help="Admix weight")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="transfergrad",
        description="Transfer attacks on small classifiers: data, training, attacks, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Generate or ingest the dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--size", type=int, help="Image height and width")
    p.add_argument("--channels", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--contrast", type=float, help="Pattern amplitude around mid-grey")
    p.add_argument("--attack-size", dest="attack_size", type=int)
    p.add_argument("--force", action="store_true", help="Replace an existing dataset")

    p = sub.add_parser("train", parents=[common], help="Train models from the roster")
    p.add_argument("--model", dest="models", action="append", help="Model name (repeatable)")
    p.add_argument("--epochs", type=int, help="Override epochs for the trained models")

    p = sub.add_parser("attack", parents=[common], help="Craft one adversarial archive")
    p.add_argument("--surrogate", required=True, help="Model to craft on")
    p.add_argument("--attack", dest="attack_name", help="Attack name from the config")
    _attack_flags(p)

    p = sub.add_parser("eval", parents=[common], help="Transfer matrix over the roster")
    p.add_argument("--surrogate", dest="surrogates", action="append")
    p.add_argument("--attack", dest="attacks", action="append")
    p.add_argument("--victim", dest="victims", action="append")

    p = sub.add_parser("sweep", parents=[common], help="Ablation sweep of one parameter")
    p.add_argument("--param", required=True, choices=["L", "H", "r", "m"])
    p.add_argument("--grid", help="start:stop:step (inclusive) or a comma list")
    p.add_argument("--surrogate")
    p.add_argument("--attack", dest="attack_name", help="Base attack from the config")
    p.add_argument("--family", help="Family to sweep in place of the named or preset one")
    p.add_argument("--seeds", type=int, help="Number of seeds to average")

    p = sub.add_parser("report", parents=[common], help="Ranked summary from transfer CSVs")
    p.add_argument("--input", dest="inputs", action="append", help="Transfer CSV (repeatable)")

    p = sub.add_parser("pipeline", parents=[common], help="gen-data, train, eval and report")
    p.add_argument("--epochs", type=int, help="Override epochs for every model")
    p.add_argument("--force", action="store_true", help="Replace an existing dataset")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    dotenv.load_dotenv()
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        cfg = resolve_config(args)
        print_resolved(cfg, args.command)
        if args.print_config:
            return 0
        return COMMANDS[args.command](cfg, args)
    except TransferGradError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.exception("%s failed", args.command)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
