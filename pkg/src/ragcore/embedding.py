"""Deterministic built-in text embedder.

Feature hashing over word tokens: each token lands in a bucket chosen by
a 64-bit FNV-1a hash mod the dimension, signed by the hash's top bit,
and the accumulated vector is L2-normalized. Hermetic and reproducible
across platforms; a semantic embedding model can replace it behind the
same ``embed(text) -> vector`` contract.
"""

from __future__ import annotations

import numpy as np

from .tokens import tokenize

DEFAULT_DIM = 1024

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


_bucket_cache: dict[tuple[str, int], tuple[int, float]] = {}


def token_bucket(token: str, dim: int) -> tuple[int, float]:
    """Bucket index and sign (+1/-1) for a token at a given dimension."""
    key = (token, dim)
    cached = _bucket_cache.get(key)
    if cached is None:
        h = fnv1a_64(token.encode("utf-8"))
        cached = (h % dim, -1.0 if (h >> 63) & 1 else 1.0)
        if len(_bucket_cache) < 1_000_000:
            _bucket_cache[key] = cached
    return cached


def embed_counts(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Unnormalized signed bucket counts; every entry is an exact integer.

    Cosine over these count vectors is reproducible bit-for-bit across
    BLAS/JIT summation orders because integer partial sums are exact in
    float64, which keeps ranking ties deterministic.
    """
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokenize(text):
        idx, sign = token_bucket(token, dim)
        vec[idx] += sign
    return vec


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Embed text as a unit-norm float64 vector (zero vector if no tokens)."""
    vec = embed_counts(text, dim)
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec = vec / norm
    return vec
