"""Local neighbor approximation: mirror sets and mirror samples.

A *mirror* of a query is a convex combination of its ``k`` nearest points in
the opposite domain.  Neighbor indices and weights are treated as constants
during differentiation; gradient reaches the neighbor features through the
frozen weights (see :class:`MirrorTable`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ConsistencyError, InvalidArgumentError
from .numerics import softmax_rows, top_k_smallest_rows

Weighting = Literal["uniform", "inverse"]


@dataclass(frozen=True)
class DistanceKind:
    """Distance used both for neighbor search and for anchor-relative positions.

    ``name`` is ``"euclidean"`` or ``"gaussian"``; the latter is
    ``1 - exp(-r^2 / (2 sigma^2))`` so that smaller still means closer.
    """

    name: str = "euclidean"
    sigma: float = 1.0

    def __post_init__(self):
        if self.name not in ("euclidean", "gaussian"):
            raise InvalidArgumentError(f"unknown distance kind {self.name!r}")
        if self.name == "gaussian" and not self.sigma > 0:
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def parse(cls, text: str) -> "DistanceKind":
        """``"euclidean"``, ``"gaussian"`` or ``"gaussian:<sigma>"``."""
        name, _, sigma = text.partition(":")
        return cls(name, float(sigma) if sigma else 1.0)

    def __str__(self):
        return self.name if self.name == "euclidean" else f"gaussian:{self.sigma:g}"

    def from_sq(self, sq: np.ndarray) -> np.ndarray:
        if self.name == "euclidean":
            return np.sqrt(sq)
        return -np.expm1(-sq / (2.0 * self.sigma**2))

    def pairwise(self, x, y) -> np.ndarray:
        return self.from_sq(sq_distances(x, y))

    def grad_coef(self, dist: np.ndarray) -> np.ndarray:
        """c such that d D(x, y) / dx = c * (x - y), given D = dist.

        The Euclidean norm has no gradient at coincidence; 0 is used there,
        which is also what a central finite difference returns.
        """
        if self.name == "euclidean":
            out = np.zeros_like(dist)
            np.divide(1.0, dist, out=out, where=dist > 0)
            return out
        return (1.0 - dist) / self.sigma**2


def sq_distances(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)


@dataclass(frozen=True)
class MirrorConfig:
    k: int = 3
    distance: DistanceKind = field(default_factory=DistanceKind)
    weighting: Weighting = "uniform"

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {self.k}")
        if self.weighting not in ("uniform", "inverse"):
            raise InvalidArgumentError(f"unknown weighting {self.weighting!r}")


@dataclass
class MirrorSet:
    query_index: int
    neighbor_indices: np.ndarray
    weights: np.ndarray


@dataclass
class MirrorSample:
    source_of_query: str
    vector: np.ndarray
    provenance: MirrorSet


@dataclass
class MirrorTable:
    """Vectorised mirror sets for a whole batch: ``(n, k)`` indices and weights."""

    indices: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[MirrorSample]) -> "MirrorTable":
        if len(samples) == 0:
            raise InvalidArgumentError("empty mirror list")
        idx = np.stack([s.provenance.neighbor_indices for s in samples])
        w = np.stack([s.provenance.weights for s in samples])
        return cls(idx, w)

    def vectors(self, pool) -> np.ndarray:
        pool = np.asarray(pool, dtype=np.float64)
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= len(pool)):
            raise ConsistencyError("mirror index outside the pool")
        out = self.weights[:, 0, None] * pool[self.indices[:, 0]]
        for j in range(1, self.indices.shape[1]):
            out = out + self.weights[:, j, None] * pool[self.indices[:, j]]
        return out

    def scatter(self, grad_mirrors, n_pool: int) -> np.ndarray:
        """Push gradients on mirror vectors back onto the pool rows."""
        grad = np.zeros((n_pool, grad_mirrors.shape[1]))
        for j in range(self.indices.shape[1]):
            np.add.at(grad, self.indices[:, j], self.weights[:, j, None] * grad_mirrors)
        return grad


def _check_pair(queries, pool):
    q = np.asarray(queries, dtype=np.float64)
    p = np.asarray(pool, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise InvalidArgumentError("mirror pool must be a non-empty (n, d) array")
    if q.ndim != 2 or q.shape[1] != p.shape[1]:
        raise InvalidArgumentError(f"query dimension {q.shape[-1]} != pool dimension {p.shape[1]}")
    return q, p


def mirror_table(queries, pool, config: MirrorConfig = MirrorConfig()) -> MirrorTable:
    q, p = _check_pair(queries, pool)
    sq = sq_distances(q, p)
    # Ranking on squared Euclidean distance is equivalent for both kinds
    # (strictly monotone transforms) and avoids ties from exp underflow.
    idx = top_k_smallest_rows(sq, config.k)
    if config.weighting == "uniform":
        w = np.full(idx.shape, 1.0 / idx.shape[1])
    else:
        d = config.distance.from_sq(np.take_along_axis(sq, idx, axis=1))
        w = softmax_rows(-d)
    return MirrorTable(idx, w)


def build_mirror_set(query, pool, k: int = 3, distance: DistanceKind = DistanceKind(),
                     weighting: Weighting = "uniform", query_index: int = 0) -> MirrorSet:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1:
        raise InvalidArgumentError("query must be a single vector")
    table = mirror_table(q[None, :], pool, MirrorConfig(k, distance, weighting))
    return MirrorSet(query_index, table.indices[0], table.weights[0])


def estimate_mirror(mset: MirrorSet, pool, source_of_query: str = "target") -> MirrorSample:
    table = MirrorTable(mset.neighbor_indices[None, :], mset.weights[None, :])
    return MirrorSample(source_of_query, table.vectors(pool)[0], mset)


def batch_mirrors(queries, pool, config: MirrorConfig = MirrorConfig(),
                  source_of_query: str = "target") -> list[MirrorSample]:
    """One mirror per query row, in query order."""
    q, p = _check_pair(queries, pool)
    if q.shape[0] == 0:
        raise InvalidArgumentError("empty query batch")
    table = mirror_table(q, p, config)
    vecs = table.vectors(p)
    return [
        MirrorSample(source_of_query, vecs[i], MirrorSet(i, table.indices[i], table.weights[i]))
        for i in range(len(table))
    ]
