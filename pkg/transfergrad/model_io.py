"""
Binary model files (``models/<name>.bin``).

Layout (all integers little-endian)::

    b"TGMD"                    magic
    u32  format version
    u32  header length
    header                     UTF-8 JSON with spec, metadata and tensors [[name, shape], ...]
    tensor payloads            '<f4', in header order
    32 bytes                   SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path

import numpy as np

from transfergrad.errors import ChecksumError, ModelFormatError, VersionMismatchError
from transfergrad.models import ArchitectureSpec, Classifier

logger = logging.getLogger(__name__)

MAGIC = b"TGMD"
FORMAT_VERSION = 1
_DIGEST_LEN = 32
_PREFIX = struct.Struct("<4sII")


def model_path(root: Path, name: str) -> Path:
    return Path(root) / "models" / f"{name}.bin"


def encode(model: Classifier) -> bytes:
    header = {
        "spec": model.spec.to_dict(),
        "metadata": model.metadata,
        "tensors": [[name, list(p.shape)] for name, p in model.params.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)), header_bytes]
    parts.extend(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.params.values())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes, source: str = "<bytes>") -> Classifier:
    if len(blob) < _PREFIX.size + _DIGEST_LEN:
        raise ChecksumError(f"{source}: truncated model file ({len(blob)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    body, digest = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{source}: checksum mismatch (corrupt or truncated file)")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{source}: format version {version}, this build reads {FORMAT_VERSION}"
        )

    offset = _PREFIX.size
    try:
        header = json.loads(body[offset : offset + header_len].decode("utf-8"))
        spec = ArchitectureSpec.from_dict(header["spec"])
    except (ValueError, KeyError) as e:
        raise ModelFormatError(f"{source}: unreadable header: {e}") from e
    offset += header_len

    params: dict[str, np.ndarray] = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(body):
            raise ModelFormatError(f"{source}: payload too short for tensor {name}")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        arr = arr.astype(np.float32).reshape(shape)
        arr.setflags(write=False)
        params[name] = arr
        offset = end
    if offset != len(body):
        raise ModelFormatError(f"{source}: {len(body) - offset} trailing payload bytes")
    expected = spec.param_shapes()
    if set(params) != set(expected):
        raise ModelFormatError(f"{source}: tensor names do not match the architecture")
    for name, arr in params.items():
        if arr.shape != tuple(expected[name]):
            raise ModelFormatError(
                f"{source}: tensor {name} has shape {arr.shape}, "
                f"architecture expects {tuple(expected[name])}"
            )
    return Classifier(spec=spec, params=params, metadata=dict(header.get("metadata", {})))


def save(model: Classifier, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(model))
    logger.debug("Saved model to %s", path)
    return path


def load(path: Path) -> Classifier:
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    return decode(path.read_bytes(), source=str(path))
