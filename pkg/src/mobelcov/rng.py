"""Seed derivation.

All randomness in a run flows from one 64-bit master seed. Each consumer asks
for a named stream (component label + counter); the label is hashed into the
SeedSequence spawn key, so streams are independent, reproducible, and do not
depend on creation order.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed_sequence(master_seed: int, label: str, counter: int = 0) -> np.random.SeedSequence:
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(key, counter))


def derive_rng(master_seed: int, label: str, counter: int = 0) -> np.random.Generator:
    """Independent generator for (master_seed, label, counter)."""
    return np.random.default_rng(derive_seed_sequence(master_seed, label, counter))
