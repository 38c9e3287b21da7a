"""Deterministic seed derivation: one master seed, stage seeds by labeled
hashing so any stage or drop can be replayed in isolation."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *labels) -> int:
    """Stable 63-bit seed for a named stage (labels may include drop indices)."""
    text = f"{master_seed}|" + "|".join(str(lab) for lab in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))
