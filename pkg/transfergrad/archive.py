"""Adversarial archives: one directory per (surrogate, attack) cell.

Files are raw little-endian tensors so the epsilon audit can be repeated bit-exactly:

  originals.f32     (N, C, H, W) float32
  adversarials.f32  (N, C, H, W) float32
  labels.i32        (N,) int32
  linf.f32          (N,) per-image L-infinity perturbation
  manifest.json     shapes, epsilon, attack settings, run-config hash, seed
  checksums.sha256  digest of every file above
"""

from __future__ import annotations

import dataclasses
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from transfergrad.attacks import AttackConfig
from transfergrad.errors import ArchiveError, DataError
from transfergrad.utils.checksums import (
    INDEX_FILENAME,
    verify_checksum_index,
    write_checksum_index,
)

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = "manifest.json"
_ARRAYS = {
    "originals": ("originals.f32", "<f4"),
    "adversarials": ("adversarials.f32", "<f4"),
    "labels": ("labels.i32", "<i4"),
    "linf": ("linf.f32", "<f4"),
}


@dataclass(frozen=True, eq=False)
class AdversarialArchive:
    originals: np.ndarray
    adversarials: np.ndarray
    labels: np.ndarray
    linf: np.ndarray
    manifest: dict[str, Any]

    @property
    def epsilon(self) -> float:
        return float(self.manifest["epsilon"])

    @property
    def surrogate(self) -> str:
        return self.manifest["surrogate"]

    @property
    def attack(self) -> str:
        return self.manifest["attack"]


def archive_dir(root: Path, surrogate: str, attack: str) -> Path:
    return Path(root) / "archives" / f"{surrogate}__{attack}"


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "value") and isinstance(value.value, str):
        return value.value
    return value


def attack_settings(cfg: AttackConfig) -> dict[str, Any]:
    return _jsonable(dataclasses.asdict(cfg))


def write_archive(
    directory: Path,
    originals: np.ndarray,
    adversarials: np.ndarray,
    labels: np.ndarray,
    *,
    surrogate: str,
    attack: str,
    cfg: AttackConfig,
    run_config_hash: str,
    seed: int,
) -> Path:
    """Write a complete archive to *directory*, replacing any previous one."""
    if originals.shape != adversarials.shape or len(labels) != len(originals):
        raise DataError(
            f"archive arrays disagree: originals {originals.shape}, "
            f"adversarials {adversarials.shape}, {len(labels)} labels"
        )
    directory = Path(directory)
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)

    diff = np.abs(adversarials.astype(np.float64) - originals.astype(np.float64))
    linf = diff.reshape(len(diff), -1).max(axis=1) if len(diff) else np.zeros(0)
    arrays = {
        "originals": originals,
        "adversarials": adversarials,
        "labels": labels,
        "linf": linf,
    }
    for key, (name, dtype) in _ARRAYS.items():
        (directory / name).write_bytes(np.ascontiguousarray(arrays[key], dtype=dtype).tobytes())

    manifest = {
        "surrogate": surrogate,
        "attack": attack,
        "family": cfg.family.value,
        "epsilon": cfg.effective_budget.epsilon,
        "n": int(len(labels)),
        "image_shape": list(originals.shape[1:]),
        "seed": seed,
        "run_config_hash": run_config_hash,
        "settings": attack_settings(cfg),
        "max_linf": float(linf.max()) if len(linf) else 0.0,
    }
    (directory / MANIFEST_FILENAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_checksum_index(directory, [MANIFEST_FILENAME] + [n for n, _ in _ARRAYS.values()])
    logger.debug("Wrote archive %s (%d images)", directory, len(labels))
    return directory


def read_archive(directory: Path, *, verify: bool = True) -> AdversarialArchive:
    directory = Path(directory)
    if not (directory / MANIFEST_FILENAME).exists():
        raise DataError(f"archive not found: {directory}")
    if verify:
        bad = verify_checksum_index(directory)
        if bad:
            raise ArchiveError(f"{directory}: checksum mismatch for {', '.join(bad)}")
    manifest = json.loads((directory / MANIFEST_FILENAME).read_text(encoding="utf-8"))
    n = int(manifest["n"])
    shape = (n, *manifest["image_shape"])
    loaded: dict[str, np.ndarray] = {}
    for key, (name, dtype) in _ARRAYS.items():
        arr = np.frombuffer((directory / name).read_bytes(), dtype=dtype)
        want = shape if key in ("originals", "adversarials") else (n,)
        if arr.size != int(np.prod(want)):
            raise ArchiveError(f"{directory / name}: {arr.size} values, expected shape {want}")
        loaded[key] = arr.astype(dtype[1:] if dtype.startswith("<") else dtype).reshape(want)
    return AdversarialArchive(
        originals=loaded["originals"],
        adversarials=loaded["adversarials"],
        labels=loaded["labels"].astype(np.int64),
        linf=loaded["linf"],
        manifest=manifest,
    )


def list_archives(root: Path) -> list[Path]:
    base = Path(root) / "archives"
    if not base.is_dir():
        return []
    return sorted(p for p in base.iterdir() if (p / INDEX_FILENAME).exists())
