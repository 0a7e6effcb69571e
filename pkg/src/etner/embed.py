"""Dense per-token feature vectors from pluggable providers.

Three kinds: a seeded hashing provider (deterministic stand-in for pretrained
embeddings), a file-backed table of precomputed vectors, and a width-0 "none"
provider for sparse-only models.  All are context-free: one token, one vector.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass
class DenseSequence:
    """One fixed-width vector per token."""

    vectors: np.ndarray  # shape [n, dim]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def hash_embed(token: str, dim: int, seed: int) -> np.ndarray:
    """Unit-norm vector derived from blake2b of "{seed}:{component}:{token}".

    Each component maps the 8-byte digest to [-1, 1); the vector is then
    scaled to Euclidean norm 1.  Same inputs, same vector, on any platform.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    v = np.empty(dim, dtype=np.float64)
    for i in range(dim):
        digest = hashlib.blake2b(
            f"{seed}:{i}:{token}".encode("utf-8"), digest_size=8
        ).digest()
        v[i] = int.from_bytes(digest, "little") / 2.0**64 * 2.0 - 1.0
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:  # astronomically unlikely, but never divide by ~0
        v[0] = 1.0
        norm = 1.0
    return v / norm


class HashEmbeddingProvider:
    """Computes hash_embed on demand and caches per token."""

    kind = "hash"

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self._cache: dict = {}

    def vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            v = hash_embed(token, self.dim, self.seed)
            self._cache[token] = v
        return v


class FileEmbeddingProvider:
    """Fixed token -> vector table; unknown tokens get the zero vector."""

    kind = "file"

    def __init__(self, table: dict, dim: int):
        self.table = table
        self.dim = dim
        self._zero = np.zeros(dim, dtype=np.float64)

    def vector(self, token: str) -> np.ndarray:
        return self.table.get(token, self._zero)


class NullEmbeddingProvider:
    """Width-0 provider: the model runs on sparse features alone."""

    kind = "none"
    dim = 0

    def vector(self, token: str) -> np.ndarray:
        return np.zeros(0, dtype=np.float64)


def load_embeddings(path) -> FileEmbeddingProvider:
    """Parse "token v1 v2 ..." rows; width is inferred from the first row."""
    table: dict = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 2:
                raise ValueError(f"bad embedding row line {lineno}")
            token = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ValueError(f"bad float in embedding row line {lineno}") from None
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(f"dim mismatch line {lineno}")
            table[token] = vec
    if dim is None:
        raise ValueError("empty embedding file")
    return FileEmbeddingProvider(table, dim)


def embed_sequence(provider, tokens) -> DenseSequence:
    out = np.zeros((len(tokens), provider.dim), dtype=np.float64)
    for i, tok in enumerate(tokens):
        out[i] = provider.vector(tok)
    return DenseSequence(out)
