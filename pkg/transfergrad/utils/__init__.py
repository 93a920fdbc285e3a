"""
Utility modules shared across transfergrad.

This package contains small helpers organized by concern:
- checksums: SHA-256 digests and checksum index files
- rng: seeded, keyed random streams
- summaries: report tables printed to stdout
"""

from transfergrad.utils.checksums import (
    INDEX_FILENAME,
    read_checksum_index,
    sha256_array,
    sha256_bytes,
    sha256_file,
    verify_checksum_index,
    write_checksum_index,
)
from transfergrad.utils.rng import SEED_ENV_VAR, env_seed, stream
from transfergrad.utils.summaries import (
    print_ranked_summary,
    print_sweep_summary,
    print_transfer_matrix,
)

__all__ = [
    # Checksums
    "INDEX_FILENAME",
    "read_checksum_index",
    "sha256_array",
    "sha256_bytes",
    "sha256_file",
    "verify_checksum_index",
    "write_checksum_index",
    # Random streams
    "SEED_ENV_VAR",
    "env_seed",
    "stream",
    # Summaries
    "print_ranked_summary",
    "print_sweep_summary",
    "print_transfer_matrix",
]
