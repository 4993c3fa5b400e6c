"""Keyed counter-based random generators.

Every draw is addressed by ``(seed, *key)`` so results do not depend on
iteration order or on how work is split between workers.
"""
from __future__ import annotations

import hashlib

import numpy as np


def keyed_generator(seed: int, *key: object) -> np.random.Generator:
    """Return a Philox generator whose stream depends only on ``seed`` and ``key``."""
    text = "\x1f".join(str(k) for k in key).encode("utf-8")
    digest = hashlib.blake2b(text, digest_size=16).digest()
    words = np.frombuffer(digest, dtype="<u4").tolist()
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.Generator(np.random.Philox(seq))
