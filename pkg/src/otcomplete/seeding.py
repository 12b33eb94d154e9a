"""Deterministic seed derivation.

One master seed per run; every component (data generation, training
iterations, splits, ...) derives its own 64-bit seed by hashing the master
seed together with a component name. Streams are independent yet fully
reproducible, and resuming at iteration k replays the identical stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *names: object) -> int:
    """Derive a 64-bit seed from a master seed and component names.

    SHA-256 based so the mapping is stable across platforms and Python
    processes (unlike builtin hash()).
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master_seed: int, *names: object) -> np.random.Generator:
    """Fresh PCG64 generator for one component of a run."""
    return np.random.default_rng(derive_seed(master_seed, *names))
