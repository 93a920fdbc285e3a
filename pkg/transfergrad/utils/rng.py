"""
Seeded random streams.

Every randomized component takes an explicit ``numpy.random.Generator``; streams are
derived from a master seed plus integer keys so parallel work items never share state.
"""

from __future__ import annotations

import os

import numpy as np

SEED_ENV_VAR = "TRANSFERGRAD_SEED"


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; same keys give the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def env_seed() -> int | None:
    """Seed from ``TRANSFERGRAD_SEED``, or ``None`` when unset or not an integer."""
    raw = os.getenv(SEED_ENV_VAR, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        return None
