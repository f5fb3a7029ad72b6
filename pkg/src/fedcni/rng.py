"""Deterministic random streams keyed by (seed, purpose, ...)."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for a named stream.

    Streams only depend on their keys, so the order in which clients are
    simulated cannot perturb results.
    """
    entropy = [_key(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *keys) -> int:
    return int(derive_rng(seed, *keys).integers(0, 2**63 - 1))
