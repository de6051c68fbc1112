"""Seeded generators.

Every random draw in the pipeline comes from a numpy Generator built here, keyed by
the run seed plus stable keys (agent id, rollout index) so results never depend on
iteration or worker order.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stable_key(value: str) -> int:
    digest = hashlib.sha256(str(value).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *keys: object) -> np.random.Generator:
    """Child generator for (seed, *keys); string keys are hashed."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.append(key if isinstance(key, int) and key >= 0 else stable_key(str(key)))
    return np.random.default_rng(np.random.SeedSequence(entropy))
