"""Finite token vocabulary with an embedding-induced distance table.

The state space is the integer range [0, K). Each token carries a
unit-normalized embedding vector; pairwise L2 distances between those
embeddings induce the distance function used by the metric probability
path. Distances are precomputed into a dense K x K table so velocity
evaluation is a pure lookup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["TokenSpace", "build_token_space", "random_token_space",
           "load_embeddings", "save_embeddings"]

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class TokenSpace:
    """Immutable vocabulary of K tokens with unit embeddings and distances.

    Attributes
    ----------
    embeddings : (K, E) float64 array, rows unit-normalized.
    distances : (K, K) float64 array, symmetric, zero diagonal,
        strictly positive off-diagonal.
    eos, pad : optional special token ids (text mode only).
    """

    embeddings: np.ndarray
    distances: np.ndarray
    eos: int | None = None
    pad: int | None = None

    @property
    def K(self) -> int:
        return self.embeddings.shape[0]

    @property
    def E(self) -> int:
        return self.embeddings.shape[1]

    def distance(self, a: int, b: int) -> float:
        """Pairwise embedding distance; raises IndexError out of range."""
        K = self.K
        if not (0 <= a < K and 0 <= b < K):
            raise IndexError(f"token out of range: ({a}, {b}), K={K}")
        return float(self.distances[a, b])


def _pairwise_distances(emb: np.ndarray) -> np.ndarray:
    """L2 distances, each unordered pair computed once and mirrored."""
    K = emb.shape[0]
    d = np.zeros((K, K))
    for a in range(K):
        diff = emb[a + 1:] - emb[a]
        row = np.sqrt(np.sum(diff * diff, axis=1))
        d[a, a + 1:] = row
        d[a + 1:, a] = row
    return d


def build_token_space(raw_embeddings, eos: int | None = None,
                      pad: int | None = None) -> TokenSpace:
    """Normalize embeddings, validate them, and precompute distances.

    Raises ValueError on zero vectors, duplicate normalized embeddings
    (distinct tokens must have distance > 0), K < 2 or bad special ids.
    """
    emb = np.asarray(raw_embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ValueError(f"expected K x E embedding matrix, got shape {emb.shape}")
    K, E = emb.shape
    if K < 2:
        raise ValueError(f"need at least 2 tokens, got K={K}")
    if E < 1:
        raise ValueError("embedding dimension must be >= 1")
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.argmin(norms))
        raise ValueError(f"token {bad} has a zero embedding vector")
    emb = emb / norms[:, None]
    d = _pairwise_distances(emb)
    off = d + np.eye(K)
    if np.any(off <= 0.0):
        a, b = np.unravel_index(int(np.argmin(off)), off.shape)
        raise ValueError(
            f"tokens {a} and {b} have identical normalized embeddings")
    for name, tok in (("eos", eos), ("pad", pad)):
        if tok is not None and not (0 <= tok < K):
            raise ValueError(f"{name} token {tok} out of range for K={K}")
    emb.setflags(write=False)
    d.setflags(write=False)
    return TokenSpace(embeddings=emb, distances=d, eos=eos, pad=pad)


def random_token_space(K: int, E: int = 8, seed: int = 0,
                       eos: int | None = None,
                       pad: int | None = None) -> TokenSpace:
    """Token space with seeded random unit embeddings (Gaussian directions)."""
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((K, E))
    return build_token_space(emb, eos=eos, pad=pad)


def save_embeddings(space: TokenSpace, path) -> None:
    """Write the versioned text format: header `dfm-emb v1 K E`, K rows."""
    with open(path, "w") as fh:
        fh.write(f"dfm-emb v1 {space.K} {space.E}\n")
        for row in space.embeddings:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_embeddings(path, eos: int | None = None,
                    pad: int | None = None) -> TokenSpace:
    """Read the `dfm-emb v1` text format and build a TokenSpace."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "dfm-emb" or header[1] != "v1":
            raise ValueError(f"bad embedding file header in {path}")
        K, E = int(header[2]), int(header[3])
        rows = np.loadtxt(fh, ndmin=2)
    if rows.shape != (K, E):
        raise ValueError(
            f"embedding file {path}: header says {K}x{E}, got {rows.shape}")
    return build_token_space(rows, eos=eos, pad=pad)
