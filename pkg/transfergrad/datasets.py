"""
Datasets: procedural synthetic classes, IDX ingestion and on-disk dataset directories.

A dataset directory (written by ``gen-data``) holds::

    train-images.idx  train-labels.idx
    test-images.idx   test-labels.idx
    attack-images.idx attack-labels.idx
    manifest.json     counts, per-class counts, seed, attack provenance, SHA-256 per file

The attack split is a subset of the test split; ``manifest.json`` records its indices into
the test split so no attack image was ever seen in training.

IDX layout
----------
bytes 0-1   zero
byte  2     dtype code (0x08 u8, 0x09 i8, 0x0B i16, 0x0C i32, 0x0D f32, 0x0E f64)
byte  3     number of dimensions
then        one big-endian u32 per dimension, then the raw big-endian payload
Files ending in ``.gz`` (or starting with the gzip magic) are decompressed transparently.
"""

from __future__ import annotations

import gzip
import json
import logging
import shutil
from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from transfergrad.errors import ArchiveError, DataError, DomainError, IdxFormatError
from transfergrad.utils.checksums import sha256_file
from transfergrad.utils.rng import stream

logger = logging.getLogger(__name__)

SPLITS = ("train", "test", "attack")
MANIFEST_FILENAME = "manifest.json"
DEFAULT_NOISE = 0.05
# Pattern amplitude around mid-grey; templates stay within 0.1 of each other in L-inf.
DEFAULT_CONTRAST = 0.1
BACKGROUND = 0.5
DEFAULT_TEST_FRACTION = 0.25
DEFAULT_ATTACK_SIZE = 200


# -- Dataset types ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images (N, C, H, W) float32 in [0, 1] with integer labels < ``num_classes``."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = ""

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray, split: str | None = None) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            split=self.split if split is None else split,
        )

    def class_counts(self) -> dict[int, int]:
        counts = Counter(int(y) for y in self.labels)
        return {k: counts.get(k, 0) for k in range(self.num_classes)}


@dataclass(frozen=True, eq=False)
class DatasetSplits:
    train: Dataset
    test: Dataset
    attack: Dataset
    attack_indices: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.train.num_classes

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.train.image_shape


# -- Synthetic templates ---------------------------------------------------


def _grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(n) + 0.5) / n
    return np.meshgrid(c, c, indexing="ij")


def _hbars(n: int) -> np.ndarray:
    yy, _ = _grid(n)
    return (np.floor(yy * 4) % 2).astype(np.float64)


def _vbars(n: int) -> np.ndarray:
    return _hbars(n).T.copy()


def _disk(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    return (((yy - 0.5) ** 2 + (xx - 0.5) ** 2) <= 0.3**2).astype(np.float64)


def _ring(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    d = np.sqrt((yy - 0.5) ** 2 + (xx - 0.5) ** 2)
    return ((d >= 0.28) & (d <= 0.45)).astype(np.float64)


def _cross(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    return ((np.abs(yy - 0.5) < 0.12) | (np.abs(xx - 0.5) < 0.12)).astype(np.float64)


def _diagonals(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    return ((np.abs(yy - xx) < 0.12) | (np.abs(yy + xx - 1) < 0.12)).astype(np.float64)


def _checker(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    return ((np.floor(yy * 3) + np.floor(xx * 3)) % 2).astype(np.float64)


def _hgradient(n: int) -> np.ndarray:
    _, xx = _grid(n)
    return xx


def _vgradient(n: int) -> np.ndarray:
    yy, _ = _grid(n)
    return 1.0 - yy


def _frame(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    inner = (np.abs(yy - 0.5) < 0.3) & (np.abs(xx - 0.5) < 0.3)
    outer = (np.abs(yy - 0.5) < 0.45) & (np.abs(xx - 0.5) < 0.45)
    return (outer & ~inner).astype(np.float64)


def _triangle(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    return (yy > xx).astype(np.float64)


def _stripes(n: int) -> np.ndarray:
    yy, xx = _grid(n)
    return (np.floor((yy + xx) * 3) % 2).astype(np.float64)


TEMPLATES: tuple[Callable[[int], np.ndarray], ...] = (
    _hbars,
    _vbars,
    _disk,
    _cross,
    _checker,
    _hgradient,
    _vgradient,
    _ring,
    _diagonals,
    _frame,
    _triangle,
    _stripes,
)


def template(
    label: int, image_size: int, channels: int = 1, *, contrast: float = DEFAULT_CONTRAST
) -> np.ndarray:
    """Noise-free (C, H, W) pattern of class *label*: ``0.5 + contrast * (pattern - 0.5)``."""
    if not 0 <= label < len(TEMPLATES):
        raise DataError(f"no template for class {label}; {len(TEMPLATES)} available")
    if not 0.0 < contrast <= 1.0:
        raise DomainError(f"contrast must lie in (0, 1], got {contrast}")
    pattern = TEMPLATES[label](image_size)
    base = (BACKGROUND + contrast * (pattern - BACKGROUND)).astype(np.float32)
    return np.repeat(base[None], channels, axis=0)


def gen_synthetic(
    num_classes: int,
    n_per_class: int,
    image_size: int,
    seed: int,
    *,
    noise: float = DEFAULT_NOISE,
    channels: int = 1,
    contrast: float = DEFAULT_CONTRAST,
) -> Dataset:
    """
    Class templates plus seeded Gaussian noise, clipped to [0, 1], in shuffled order.

    *contrast* sets how far a pattern departs from the grey background. At the default an
    L-inf budget of 16/255 covers more than half the distance between any two templates.
    """
    if num_classes > len(TEMPLATES):
        raise DataError(
            f"{num_classes} classes requested but only {len(TEMPLATES)} templates exist"
        )
    if num_classes < 2:
        raise DomainError(f"need at least 2 classes, got {num_classes}")
    if n_per_class < 1 or image_size < 2 or channels < 1:
        raise DomainError(
            f"invalid sizes: n_per_class={n_per_class}, image_size={image_size}, "
            f"channels={channels}"
        )
    if noise < 0:
        raise DomainError(f"noise must be >= 0, got {noise}")

    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    labels = labels[stream(seed, 0).permutation(len(labels))]
    bank = np.stack(
        [template(k, image_size, channels, contrast=contrast) for k in range(num_classes)]
    )
    images = bank[labels]
    if noise > 0:
        jitter = stream(seed, 1).normal(0.0, noise, size=images.shape)
        images = images + jitter.astype(np.float32)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return Dataset(images=images, labels=labels, num_classes=num_classes, split="all")


def split_dataset(
    data: Dataset,
    seed: int,
    *,
    test_fraction: float = DEFAULT_TEST_FRACTION,
    attack_size: int = DEFAULT_ATTACK_SIZE,
) -> DatasetSplits:
    """Stratified train/test split plus an attack split drawn from the test split."""
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if attack_size < 1:
        raise DomainError(f"attack_size must be >= 1, got {attack_size}")
    rng = stream(seed, 2)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for k in range(data.num_classes):
        members = np.flatnonzero(data.labels == k)
        members = members[rng.permutation(len(members))]
        n_test = max(1, int(round(len(members) * test_fraction))) if len(members) > 1 else 0
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    train = data.subset(np.sort(np.concatenate(train_idx)), "train")
    test = data.subset(np.sort(np.concatenate(test_idx)), "test")
    return with_attack_split(train, test, seed, attack_size=attack_size)


def with_attack_split(
    train: Dataset, test: Dataset, seed: int, *, attack_size: int = DEFAULT_ATTACK_SIZE
) -> DatasetSplits:
    """Draw the attack split (at most *attack_size* images) from *test*."""
    if attack_size < 1:
        raise DomainError(f"attack_size must be >= 1, got {attack_size}")
    if train.num_classes != test.num_classes or train.image_shape != test.image_shape:
        raise DataError(
            f"train and test disagree: {train.num_classes} vs {test.num_classes} classes, "
            f"images {train.image_shape} vs {test.image_shape}"
        )
    n_attack = min(attack_size, len(test))
    attack_indices = np.sort(stream(seed, 3).permutation(len(test))[:n_attack])
    return DatasetSplits(
        train=train,
        test=test,
        attack=test.subset(attack_indices, "attack"),
        attack_indices=attack_indices,
    )


# -- IDX -------------------------------------------------------------------

IDX_DTYPES: dict[int, np.dtype] = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt: code for code, dt in IDX_DTYPES.items()}


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise DataError(f"IDX file not found: {path}")
    raw = path.read_bytes()
    if path.suffix == ".gz" or raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise IdxFormatError(f"{path}: corrupt gzip stream: {e}") from e
    return raw


def read_idx(path: Path) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError(f"{path}: bad magic {raw[:4].hex()}")
    code, ndim = raw[2], raw[3]
    if code not in IDX_DTYPES:
        raise IdxFormatError(f"{path}: unknown dtype code 0x{code:02x}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated dimension list")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype=">u4", count=ndim, offset=4))
    dtype = IDX_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    actual = len(raw) - header_len
    if actual < expected:
        raise IdxFormatError(
            f"{path}: truncated payload, expected {expected} bytes for dims {dims}, got {actual}"
        )
    if actual > expected:
        raise IdxFormatError(
            f"{path}: payload has {actual - expected} bytes beyond dims {dims}"
        )
    arr = np.frombuffer(raw, dtype=dtype, offset=header_len).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_idx(path: Path, arr: np.ndarray) -> Path:
    """Write *arr* as IDX (big-endian payload); gzip when *path* ends in ``.gz``."""
    path = Path(path)
    arr = np.asarray(arr)
    be = arr.dtype.newbyteorder(">") if arr.dtype.itemsize > 1 else arr.dtype
    code = _IDX_CODES.get(be)
    if code is None:
        raise IdxFormatError(f"dtype {arr.dtype} has no IDX code")
    if arr.ndim > 255:
        raise IdxFormatError(f"too many dimensions for IDX: {arr.ndim}")
    header = bytes([0, 0, code, arr.ndim]) + np.asarray(arr.shape, dtype=">u4").tobytes()
    payload = header + np.ascontiguousarray(arr, dtype=be).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)
    return path


def load_idx(
    images_path: Path,
    labels_path: Path,
    *,
    num_classes: int | None = None,
    split: str = "",
) -> Dataset:
    """IDX image/label pair as a Dataset; byte pixels are scaled from [0, 255] to [0, 1]."""
    images = read_idx(Path(images_path))
    labels = read_idx(Path(labels_path))
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: labels must be 1-D, got dims {labels.shape}")
    if len(images) != len(labels):
        raise IdxFormatError(
            f"count mismatch: {len(images)} images in {images_path} "
            f"but {len(labels)} labels in {labels_path}"
        )
    if images.ndim == 3:
        images = images[:, None]
    elif images.ndim != 4:
        raise IdxFormatError(f"{images_path}: images must be 3-D or 4-D, got {images.shape}")
    if images.dtype == np.uint8:
        pixels = images.astype(np.float32) / np.float32(255.0)
    else:
        pixels = images.astype(np.float32)
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
            raise IdxFormatError(f"{images_path}: non-byte pixels must lie in [0, 1]")
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1 if labels.size else 0, 2)
    return Dataset(images=pixels, labels=labels, num_classes=num_classes, split=split)


# -- Dataset directories ---------------------------------------------------


def _split_files(split: str) -> tuple[str, str]:
    return f"{split}-images.idx", f"{split}-labels.idx"


def write_dataset_dir(
    splits: DatasetSplits,
    directory: Path,
    *,
    seed: int,
    force: bool = False,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Write the six IDX files plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()):
        if not force:
            raise DataError(f"output directory {directory} is not empty (use --force)")
        shutil.rmtree(directory)
    directory.mkdir(parents=True, exist_ok=True)

    files: dict[str, str] = {}
    for split in SPLITS:
        ds: Dataset = getattr(splits, split)
        img_name, lbl_name = _split_files(split)
        write_idx(directory / img_name, ds.images.astype(np.float32))
        write_idx(directory / lbl_name, ds.labels.astype(np.uint8))
        files[img_name] = sha256_file(directory / img_name)
        files[lbl_name] = sha256_file(directory / lbl_name)

    manifest: dict[str, Any] = {
        "seed": seed,
        "num_classes": splits.num_classes,
        "image_shape": list(splits.image_shape),
        "counts": {split: len(getattr(splits, split)) for split in SPLITS},
        "total_images": len(splits.train) + len(splits.test),
        "class_counts": {
            split: {str(k): v for k, v in getattr(splits, split).class_counts().items()}
            for split in SPLITS
        },
        "attack_indices": [int(i) for i in splits.attack_indices],
        "files": files,
    }
    if extra:
        manifest.update(extra)
    path = directory / MANIFEST_FILENAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote dataset to %s (%d images)", directory, manifest["total_images"])
    return path


def read_manifest(directory: Path) -> dict[str, Any]:
    path = Path(directory) / MANIFEST_FILENAME
    if not path.exists():
        raise DataError(f"dataset manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_dataset_dir(directory: Path, *, verify: bool = True) -> DatasetSplits:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    manifest = read_manifest(directory)
    if verify:
        bad = [
            name
            for name, digest in manifest["files"].items()
            if not (directory / name).exists() or sha256_file(directory / name) != digest
        ]
        if bad:
            raise ArchiveError(f"{directory}: checksum mismatch for {', '.join(sorted(bad))}")
    k = int(manifest["num_classes"])
    loaded = {
        split: load_idx(
            *(directory / name for name in _split_files(split)), num_classes=k, split=split
        )
        for split in SPLITS
    }
    return DatasetSplits(
        train=loaded["train"],
        test=loaded["test"],
        attack=loaded["attack"],
        attack_indices=np.asarray(manifest["attack_indices"], dtype=np.int64),
    )
