"""
Exception hierarchy shared by every transfergrad module.

Library code raises these; only ``cli.main`` turns them into process exit codes:

  0  success
  2  configuration error (ConfigError and its subclasses)
  3  data error (DataError and its format-specific subclasses)
  4  numerical failure (NumericalError)
"""

from __future__ import annotations


class TransferGradError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when this escapes."""

    exit_code = 1


class ConfigError(TransferGradError, ValueError):
    """Invalid or unresolvable configuration (unknown keys, names, families, grids)."""

    exit_code = 2


class ShapeError(ConfigError):
    """Operand shapes do not fit the operation."""


class AttackError(ConfigError):
    """An attack cannot run with the inputs it was given (e.g. empty mix pool)."""


class DataError(TransferGradError):
    """Missing, malformed or conflicting data on disk."""

    exit_code = 3


class IdxFormatError(DataError):
    """IDX file with bad magic, inconsistent dimensions or truncated payload."""


class ModelFormatError(DataError):
    """Model file that cannot be decoded."""


class VersionMismatchError(ModelFormatError):
    """Model file written by an incompatible format version."""


class ChecksumError(ModelFormatError):
    """Stored checksum does not match the payload (corrupt or truncated file)."""


class ArchiveError(DataError):
    """Adversarial archive or dataset directory fails its checksum index."""


class NumericalError(TransferGradError, ArithmeticError):
    """Non-finite values, diverging training, or a broken perturbation budget."""

    exit_code = 4


class DomainError(ConfigError):
    """Argument outside the operation's domain (ranges, bounds, label ids)."""


class RecordError(ConfigError):
    """Misuse of a computation record (unrecorded loss, unknown leaf)."""
