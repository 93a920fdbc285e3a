"""
Report row models and CSV serialization.

All files are UTF-8 with ``.`` as the decimal separator; rates are written with six
decimals and an undefined rate as ``NA``.

Transfer CSV columns
--------------------
surrogate      model the adversarials were crafted on
victim         model they were scored against (== surrogate on white-box rows)
attack         attack name from the run configuration
raw_rate       fraction of adversarials the victim misclassifies
filtered_rate  same, among images the victim classifies correctly when clean (NA if none)
clean_error    victim error rate on the clean images
n              number of images
seed           master seed of the cell

Sweep CSV columns
-----------------
parameter, value, victim, raw_rate, filtered_rate, seed
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from transfergrad.errors import DataError

NA = "NA"

TRANSFER_COLUMNS = [
    "surrogate",
    "victim",
    "attack",
    "raw_rate",
    "filtered_rate",
    "clean_error",
    "n",
    "seed",
]

SWEEP_COLUMNS = ["parameter", "value", "victim", "raw_rate", "filtered_rate", "seed"]

SWEEP_SUMMARY_COLUMNS = ["parameter", "value", "victim", "raw_rate", "filtered_rate", "seeds"]

METRICS_COLUMNS = ["epoch", "loss", "train_accuracy", "test_accuracy"]

RANKED_COLUMNS = [
    "rank",
    "attack",
    "transfer_raw_rate",
    "transfer_filtered_rate",
    "white_box_raw_rate",
    "cells",
]


def fmt_rate(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NA
    return f"{value:.6f}"


def parse_rate(text: str) -> float | None:
    text = (text or "").strip()
    if not text or text == NA:
        return None
    return float(text)


def fmt_value(value: float) -> str:
    """Grid value without float noise (``0.30000000000000004`` -> ``0.3``)."""
    return f"{value:.10g}"


# -- Row models ------------------------------------------------------------


@dataclass(frozen=True)
class TransferRow:
    """One (surrogate, victim, attack) cell of a transfer report."""

    surrogate: str
    victim: str
    attack: str
    raw_rate: float
    filtered_rate: float | None
    clean_error: float
    n: int
    seed: int

    @property
    def white_box(self) -> bool:
        return self.surrogate == self.victim

    def to_row(self) -> dict[str, str]:
        return {
            "surrogate": self.surrogate,
            "victim": self.victim,
            "attack": self.attack,
            "raw_rate": fmt_rate(self.raw_rate),
            "filtered_rate": fmt_rate(self.filtered_rate),
            "clean_error": fmt_rate(self.clean_error),
            "n": str(self.n),
            "seed": str(self.seed),
        }

    @classmethod
    def from_row(cls, row: dict[str, str]) -> TransferRow:
        return cls(
            surrogate=row["surrogate"],
            victim=row["victim"],
            attack=row["attack"],
            raw_rate=parse_rate(row["raw_rate"]) or 0.0,
            filtered_rate=parse_rate(row["filtered_rate"]),
            clean_error=parse_rate(row["clean_error"]) or 0.0,
            n=int(row["n"]),
            seed=int(row["seed"]),
        )


@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    victim: str
    raw_rate: float
    filtered_rate: float | None
    seed: int

    def to_row(self) -> dict[str, str]:
        return {
            "parameter": self.parameter,
            "value": fmt_value(self.value),
            "victim": self.victim,
            "raw_rate": fmt_rate(self.raw_rate),
            "filtered_rate": fmt_rate(self.filtered_rate),
            "seed": str(self.seed),
        }

    @classmethod
    def from_row(cls, row: dict[str, str]) -> SweepRow:
        return cls(
            parameter=row["parameter"],
            value=float(row["value"]),
            victim=row["victim"],
            raw_rate=parse_rate(row["raw_rate"]) or 0.0,
            filtered_rate=parse_rate(row["filtered_rate"]),
            seed=int(row["seed"]),
        )


@dataclass(frozen=True)
class SweepSummaryRow:
    """Mean over seeds for one (value, victim); ``victim == "mean"`` averages victims too."""

    parameter: str
    value: float
    victim: str
    raw_rate: float
    filtered_rate: float | None
    seeds: int

    def to_row(self) -> dict[str, str]:
        return {
            "parameter": self.parameter,
            "value": fmt_value(self.value),
            "victim": self.victim,
            "raw_rate": fmt_rate(self.raw_rate),
            "filtered_rate": fmt_rate(self.filtered_rate),
            "seeds": str(self.seeds),
        }


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float | None

    def to_row(self) -> dict[str, str]:
        return {
            "epoch": str(self.epoch),
            "loss": f"{self.loss:.6f}",
            "train_accuracy": fmt_rate(self.train_accuracy),
            "test_accuracy": fmt_rate(self.test_accuracy),
        }


@dataclass(frozen=True)
class RankedRow:
    rank: int
    attack: str
    transfer_raw_rate: float | None
    transfer_filtered_rate: float | None
    white_box_raw_rate: float | None
    cells: int

    def to_row(self) -> dict[str, str]:
        return {
            "rank": str(self.rank),
            "attack": self.attack,
            "transfer_raw_rate": fmt_rate(self.transfer_raw_rate),
            "transfer_filtered_rate": fmt_rate(self.transfer_filtered_rate),
            "white_box_raw_rate": fmt_rate(self.white_box_raw_rate),
            "cells": str(self.cells),
        }


# -- CSV I/O ---------------------------------------------------------------


class _Row(Protocol):
    def to_row(self) -> dict[str, str]: ...


def write_rows_csv(path: Path, rows: Iterable[_Row], columns: Sequence[str]) -> Path:
    """Write *rows* (header first), replacing any existing file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_row())
    return path


def rows_to_csv_string(rows: Iterable[_Row], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.to_row())
    return buf.getvalue()


def _load(path: Path, columns: Sequence[str], parse) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"report not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(missing)}")
        return [parse(row) for row in reader]


def write_transfer_csv(path: Path, rows: Iterable[TransferRow]) -> Path:
    return write_rows_csv(path, rows, TRANSFER_COLUMNS)


def load_transfer_csv(path: Path) -> list[TransferRow]:
    return _load(path, TRANSFER_COLUMNS, TransferRow.from_row)


def write_sweep_csv(path: Path, rows: Iterable[SweepRow]) -> Path:
    return write_rows_csv(path, rows, SWEEP_COLUMNS)


def load_sweep_csv(path: Path) -> list[SweepRow]:
    return _load(path, SWEEP_COLUMNS, SweepRow.from_row)
