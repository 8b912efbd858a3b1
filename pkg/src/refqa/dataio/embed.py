"""Hashed bag-of-tokens text embedding, a stand-in for a sentence encoder."""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

DEFAULT_DIM = 256


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    seed = int.from_bytes(digest, "little")
    signs = np.random.Generator(np.random.Philox(seed)).integers(0, 2, size=dim)
    vec = (2.0 * signs - 1.0) / np.sqrt(dim)
    vec.flags.writeable = False
    return vec


def deterministic_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Unit vector: L2-normalized sum of per-token signed hash vectors.

    Tokens are whitespace-separated and lowercased; shared tokens raise the
    cosine similarity between two texts.
    """
    tokens = text.lower().split()
    if not tokens:
        raise ValueError("cannot embed empty text")
    acc = np.zeros(dim)
    for tok in tokens:
        acc += _token_vector(tok, dim)
    norm = np.linalg.norm(acc)
    if norm == 0.0:
        raise ValueError(f"tokens of {text!r} cancel to a zero embedding")
    return acc / norm
