"""Named random sub-streams derived from one master seed.

child seed = first 8 bytes (big endian) of sha256("{master}|{purpose}|{index}")
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(master: int, purpose: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(master)}|{purpose}|{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def substream(master: int, purpose: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(master, purpose, index))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return np.random.default_rng(int(rng))
