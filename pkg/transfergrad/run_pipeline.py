#!/usr/bin/env python3
"""
Run the full experiment: gen-data → train → attack matrix → eval → report.

Each phase is also a CLI sub-command; the functions below are shared by both. Everything
lands under the configured output directory:

  data/                          dataset directory (IDX files + manifest.json)
  models/<name>.bin              trained classifiers
  metrics/<name>.csv             per-epoch training metrics
  archives/<surrogate>__<attack>/ adversarial archives
  reports/transfer.csv           transfer matrix
  reports/ranked.csv             ranked summary per attack
  reports/sweep-<param>.csv      ablation sweep (plus -summary.csv)
  config.yaml                    resolved run configuration

Rerunning with the same resolved config reproduces every CSV and archive byte for byte.
"""

from __future__ import annotations

import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from omegaconf import DictConfig

from transfergrad import archive
from transfergrad import datasets as ds
from transfergrad import evalharness as ev
from transfergrad import model_io
from transfergrad import models as md
from transfergrad import report_csv
from transfergrad import run_config as rc
from transfergrad.attacks import AttackConfig, AttackFamily
from transfergrad.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

CONFIG_FILENAME = "config.yaml"
TRANSFER_CSV = "transfer.csv"
RANKED_CSV = "ranked.csv"


# -- Paths -----------------------------------------------------------------


def data_dir(cfg: DictConfig) -> Path:
    if cfg.dataset.source == "dir":
        if not cfg.dataset.path:
            raise ConfigError("dataset.source = 'dir' requires dataset.path")
        return Path(cfg.dataset.path)
    if cfg.dataset.path:
        return Path(cfg.dataset.path)
    return rc.output_dir(cfg) / "data"


def reports_dir(cfg: DictConfig) -> Path:
    return rc.output_dir(cfg) / "reports"


def metrics_path(cfg: DictConfig, name: str) -> Path:
    return rc.output_dir(cfg) / "metrics" / f"{name}.csv"


def sweep_paths(cfg: DictConfig, parameter: str) -> tuple[Path, Path]:
    base = reports_dir(cfg)
    return base / f"sweep-{parameter}.csv", base / f"sweep-{parameter}-summary.csv"


def save_resolved_config(cfg: DictConfig) -> Path:
    path = rc.output_dir(cfg) / CONFIG_FILENAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rc.to_yaml(cfg), encoding="utf-8")
    return path


# -- Phase 1: data ---------------------------------------------------------


def build_splits(cfg: DictConfig) -> ds.DatasetSplits:
    """Create train/test/attack splits from the configured source (not written to disk)."""
    d = cfg.dataset
    seed = int(cfg.seed)
    if d.source == "synthetic":
        data = ds.gen_synthetic(
            d.classes,
            d.per_class,
            d.image_size,
            seed,
            noise=d.noise,
            channels=d.channels,
            contrast=d.contrast,
        )
        return ds.split_dataset(
            data, seed, test_fraction=d.test_fraction, attack_size=d.attack_size
        )
    if d.source == "idx":
        paths = [d.train_images, d.train_labels, d.test_images, d.test_labels]
        if any(p is None for p in paths):
            raise ConfigError(
                "dataset.source = 'idx' requires train_images, train_labels, "
                "test_images and test_labels"
            )
        train = ds.load_idx(d.train_images, d.train_labels, split="train")
        test = ds.load_idx(d.test_images, d.test_labels, split="test")
        k = max(train.num_classes, test.num_classes)
        train, test = replace(train, num_classes=k), replace(test, num_classes=k)
        return ds.with_attack_split(train, test, seed, attack_size=d.attack_size)
    return ds.load_dataset_dir(data_dir(cfg))


def _provenance(d: DictConfig) -> dict[str, Any]:
    if d.source == "synthetic":
        return {"source": d.source, "noise": float(d.noise), "contrast": float(d.contrast)}
    return {"source": d.source}


def generate_data(cfg: DictConfig, *, force: bool = False) -> Path:
    """Write the dataset directory; a ``dir`` source is only verified."""
    target = data_dir(cfg)
    if cfg.dataset.source == "dir":
        ds.load_dataset_dir(target)
        return target / ds.MANIFEST_FILENAME
    splits = build_splits(cfg)
    return ds.write_dataset_dir(
        splits,
        target,
        seed=int(cfg.seed),
        force=force,
        extra=_provenance(cfg.dataset),
    )


def load_splits(cfg: DictConfig) -> ds.DatasetSplits:
    target = data_dir(cfg)
    if not (target / ds.MANIFEST_FILENAME).exists():
        raise DataError(f"dataset not found: {target} (run gen-data first)")
    return ds.load_dataset_dir(target)


# -- Phase 2: training -----------------------------------------------------


def train_models(
    cfg: DictConfig,
    splits: ds.DatasetSplits,
    names: Sequence[str] | None = None,
    *,
    quiet: bool = True,
) -> dict[str, Path]:
    """Train each named model, writing ``models/<name>.bin`` and ``metrics/<name>.csv``."""
    names = list(names) if names else list(cfg.models)
    written: dict[str, Path] = {}
    for name in names:
        spec = rc.architecture(cfg, name, splits.image_shape, splits.num_classes)
        train_cfg = rc.train_config(cfg, name)
        model = md.build(spec, train_cfg.seed)
        model = replace(model, metadata={**model.metadata, "name": name})
        result = md.train(model, splits.train, train_cfg, splits.test, quiet=quiet)
        path = model_io.save(result.model, model_io.model_path(rc.output_dir(cfg), name))
        report_csv.write_rows_csv(
            metrics_path(cfg, name),
            [
                report_csv.EpochRow(m.epoch, m.loss, m.train_accuracy, m.test_accuracy)
                for m in result.history
            ],
            report_csv.METRICS_COLUMNS,
        )
        acc = md.accuracy(result.model, splits.test.images, splits.test.labels)
        logger.info("Trained %s: test acc %.3f", name, acc)
        written[name] = path
    return written


def load_models(cfg: DictConfig, names: Sequence[str] | None = None) -> dict[str, md.Classifier]:
    names = list(names) if names else list(cfg.models)
    root = rc.output_dir(cfg)
    return {name: model_io.load(model_io.model_path(root, name)) for name in names}


# -- Phase 3/4: attacks and evaluation -------------------------------------


def _archiver(cfg: DictConfig, attack_set: ds.Dataset) -> ev.OnCrafted:
    root = rc.output_dir(cfg)
    run_hash = rc.config_hash(cfg)

    def on_crafted(
        surrogate: str, attack_name: str, attack_cfg: AttackConfig, batch: ev.CraftedBatch
    ) -> None:
        archive.write_archive(
            archive.archive_dir(root, surrogate, attack_name),
            attack_set.images,
            batch.adversarials,
            attack_set.labels,
            surrogate=surrogate,
            attack=attack_name,
            cfg=attack_cfg,
            run_config_hash=run_hash,
            seed=int(cfg.seed),
        )

    return on_crafted


def attack_one(
    cfg: DictConfig,
    splits: ds.DatasetSplits,
    surrogate: md.Classifier,
    surrogate_name: str,
    attack_name: str,
    *,
    threads: int = 1,
    quiet: bool = True,
) -> tuple[Path, ev.CraftedBatch]:
    """Craft one archive: *attack_name* run on *surrogate* over the attack split."""
    attack_cfg = rc.attack_config(cfg, attack_name)
    batch = ev.craft_adversarials(
        surrogate,
        splits.attack,
        attack_cfg,
        splits.train,
        threads=threads,
        quiet=quiet,
        desc=f"{surrogate_name}/{attack_name}",
    )
    batch.telemetry.log_summary(f"{surrogate_name}/{attack_name}")
    _archiver(cfg, splits.attack)(surrogate_name, attack_name, attack_cfg, batch)
    return archive.archive_dir(rc.output_dir(cfg), surrogate_name, attack_name), batch


def evaluate(
    cfg: DictConfig,
    splits: ds.DatasetSplits,
    models: dict[str, md.Classifier],
    *,
    threads: int = 1,
    quiet: bool = True,
) -> tuple[Path, ev.TransferReport]:
    """Transfer matrix over the selected surrogates, attacks and victims."""
    surrogates = rc.selected(cfg, "surrogates")
    victims = set(rc.selected(cfg, "victims"))
    attack_cfgs = {name: rc.attack_config(cfg, name) for name in rc.selected(cfg, "attacks")}
    report = ev.transfer_matrix(
        models,
        attack_cfgs,
        splits.attack,
        int(cfg.seed),
        mix_pool=splits.train,
        surrogates=surrogates,
        threads=threads,
        quiet=quiet,
        on_crafted=_archiver(cfg, splits.attack),
    )
    rows = [r for r in report.rows if r.victim in victims or r.white_box]
    path = report_csv.write_transfer_csv(reports_dir(cfg) / TRANSFER_CSV, rows)
    return path, replace(report, rows=rows)


def sweep(
    cfg: DictConfig,
    splits: ds.DatasetSplits,
    models: dict[str, md.Classifier],
    parameter: str,
    *,
    grid: str | None = None,
    attack_name: str | None = None,
    family: str | None = None,
    surrogate: str | None = None,
    threads: int = 1,
    quiet: bool = True,
) -> tuple[Path, Path, ev.SweepReport]:
    """Standard ablation for *parameter*; *grid*, *family* and the base attack are optional.

    A named attack is swept with its own family and settings. Without one the
    preset family and fixed values apply, with *family* overriding the former.
    """
    base = rc.attack_config(cfg, attack_name) if attack_name is not None else None
    if base is not None and family is not None:
        base = replace(base, family=AttackFamily.parse(family))
    values, attack_cfg = ev.preset_config(parameter, base, seed=int(cfg.seed))
    if base is None and family is not None:
        attack_cfg = replace(attack_cfg, family=AttackFamily.parse(family))
        ev.check_sweepable(parameter, attack_cfg.family)
    if grid is not None:
        values = ev.parse_grid(grid)
    surrogate = surrogate or cfg.eval.sweep_surrogate or next(iter(models))
    report = ev.ablation_sweep(
        parameter,
        values,
        attack_cfg,
        models,
        splits.attack,
        surrogate=surrogate,
        seeds=ev.sweep_seeds(int(cfg.seed), cfg.eval.sweep_seeds),
        mix_pool=splits.train,
        threads=threads,
        quiet=quiet,
    )
    rows_path, summary_path = sweep_paths(cfg, parameter)
    report_csv.write_sweep_csv(rows_path, report.rows)
    report_csv.write_rows_csv(summary_path, report.summary(), report_csv.SWEEP_SUMMARY_COLUMNS)
    return rows_path, summary_path, report


# -- Phase 5: report -------------------------------------------------------


def build_report(
    cfg: DictConfig, inputs: Sequence[Path] | None = None
) -> tuple[Path, list[report_csv.RankedRow]]:
    """Merge transfer CSVs into ``reports/ranked.csv``; later files win on duplicate cells."""
    paths = list(inputs) if inputs else [reports_dir(cfg) / TRANSFER_CSV]
    cells: dict[tuple[str, str, str], report_csv.TransferRow] = {}
    for path in paths:
        for row in report_csv.load_transfer_csv(path):
            cells[(row.surrogate, row.victim, row.attack)] = row
    ranked = ev.ranked_summary(list(cells.values()))
    out = report_csv.write_rows_csv(
        reports_dir(cfg) / RANKED_CSV, ranked, report_csv.RANKED_COLUMNS
    )
    return out, ranked


# -- Full run --------------------------------------------------------------


@dataclass(frozen=True)
class PipelineOutputs:
    config: Path
    dataset: Path
    models: dict[str, Path]
    transfer: Path
    ranked: Path
    ranked_rows: list[report_csv.RankedRow]


def run_pipeline(
    cfg: DictConfig, *, force: bool = False, threads: int | None = None, quiet: bool = True
) -> PipelineOutputs:
    """gen-data → train all → attack matrix (with archives) → ranked report."""
    threads = threads or cfg.eval.threads
    config_path = save_resolved_config(cfg)
    manifest = generate_data(cfg, force=force)
    splits = load_splits(cfg)
    if not quiet:
        print(f"Dataset: {manifest} ({len(splits.train)} train, {len(splits.attack)} attack)")

    model_paths = train_models(cfg, splits, quiet=quiet)
    if not quiet:
        print(f"Trained {len(model_paths)} models")

    models = load_models(cfg)
    transfer_path, report = evaluate(cfg, splits, models, threads=threads, quiet=quiet)
    if not quiet:
        print(f"Transfer matrix: {len(report.rows)} rows -> {transfer_path}")

    ranked_path, ranked = build_report(cfg, [transfer_path])
    return PipelineOutputs(
        config=config_path,
        dataset=manifest,
        models=model_paths,
        transfer=transfer_path,
        ranked=ranked_path,
        ranked_rows=ranked,
    )


def main() -> int:
    from transfergrad.cli import main as cli_main

    return cli_main(["pipeline", *sys.argv[1:]])


if __name__ == "__main__":
    raise SystemExit(main())
