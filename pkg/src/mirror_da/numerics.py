"""Dense vector kernels shared by the rest of the package.

Everything here is a pure function over numpy arrays. The scalar-facing
functions (``softmax``, ``kl_divergence``, ...) validate their inputs; the
``*_rows`` / ``pairwise_*`` variants are the vectorised versions used inside
the training loop and skip most checks.
"""
from __future__ import annotations

import heapq
import logging

import numpy as np

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

KL_EPS = 1e-12


def _as_vector(x, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax of a single vector."""
    z = _as_vector(logits, "logits")
    if z.size == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("softmax input must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits, mask=None) -> np.ndarray:
    """Row-wise softmax. Entries where ``mask`` is False get probability 0."""
    z = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    """KL(p || q) in nats; ``q`` is clamped below at ``eps`` and 0·log 0 = 0."""
    p = _as_vector(p, "p")
    q = _as_vector(q, "q")
    if p.shape != q.shape:
        raise InvalidArgumentError(f"length mismatch: {p.size} vs {q.size}")
    return float(kl_rows(p[None, :], q[None, :], eps)[0])


def kl_rows(p, q, eps: float = KL_EPS) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), eps)
    pos = p > 0
    safe_p = np.where(pos, p, 1.0)
    terms = np.where(pos, p * (np.log(safe_p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def top_k_smallest(values, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest values, ordered by (value, index).

    Uses a bounded heap, so the cost is O(n log k). ``k`` larger than the
    input is clamped with a warning.
    """
    v = _as_vector(values, "values")
    if v.size == 0:
        raise InvalidArgumentError("top_k_smallest of an empty vector")
    if k < 1:
        raise InvalidArgumentError(f"k must be positive, got {k}")
    if k > v.size:
        logger.warning("k=%d exceeds pool size %d; clamping", k, v.size)
        k = v.size
    best = heapq.nsmallest(k, zip(v.tolist(), range(v.size)))
    return np.array([i for _, i in best], dtype=np.intp)


def top_k_smallest_rows(values, k: int) -> np.ndarray:
    """Row-wise ``top_k_smallest`` for a distance matrix (same tie-breaking)."""
    v = np.asarray(values, dtype=np.float64)
    if k < 1:
        raise InvalidArgumentError(f"k must be positive, got {k}")
    if k > v.shape[-1]:
        logger.warning("k=%d exceeds pool size %d; clamping", k, v.shape[-1])
        k = v.shape[-1]
    # stable sort keeps equal values in index order
    return np.argsort(v, axis=-1, kind="stable")[..., :k]


def euclidean_distance(a, b) -> float:
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def gaussian_kernel_distance(a, b, sigma: float = 1.0) -> float:
    """``1 - exp(-|a-b|^2 / (2 sigma^2))``: zero at coincidence, monotone in |a-b|."""
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.size} vs {b.size}")
    sq = float(np.sum((a - b) ** 2))
    return float(-np.expm1(-sq / (2.0 * sigma * sigma)))


def pairwise_sq_distances(x, y) -> np.ndarray:
    """Squared Euclidean distances, shape (len(x), len(y)), by explicit differences."""
    diff = np.asarray(x, dtype=np.float64)[:, None, :] - np.asarray(y, dtype=np.float64)[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
