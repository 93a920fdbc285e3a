"""SHA-256 helpers for files, arrays and checksum index files."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

INDEX_FILENAME = "checksums.sha256"


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def sha256_file(path: Path) -> str:
    """Hex digest of a file, read in 1 MiB blocks."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_array(arr: np.ndarray) -> str:
    """Digest of dtype, shape and raw bytes; equal arrays hash equal."""
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(arr.dtype.str.encode())
    h.update(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def write_checksum_index(directory: Path, filenames: list[str]) -> Path:
    """Write ``sha256sum``-style lines for *filenames* (sorted) under *directory*."""
    lines = [f"{sha256_file(directory / name)}  {name}" for name in sorted(filenames)]
    path = directory / INDEX_FILENAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_checksum_index(directory: Path) -> dict[str, str]:
    """Return ``{filename: digest}``; empty dict when the index is missing."""
    path = directory / INDEX_FILENAME
    if not path.exists():
        return {}
    out: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        digest, _, name = line.partition("  ")
        out[name] = digest
    return out


def verify_checksum_index(directory: Path) -> list[str]:
    """Return names whose digest is missing or differs (empty list == intact)."""
    expected = read_checksum_index(directory)
    if not expected:
        return [INDEX_FILENAME]
    bad: list[str] = []
    for name, digest in expected.items():
        path = directory / name
        if not path.exists() or sha256_file(path) != digest:
            bad.append(name)
    return bad
