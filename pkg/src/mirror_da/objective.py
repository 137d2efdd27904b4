"""Source cross-entropy, auxiliary-distribution target loss, total loss."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12


@dataclass
class AuxiliaryDistribution:
    z: np.ndarray
    epoch_computed: int = 0


@dataclass
class LossBreakdown:
    source_ce: float = 0.0
    target_aux: float = 0.0
    mirror_f: float = 0.0
    mirror_g: float = 0.0
    total: float = 0.0
    gamma: float = 1.0

    def as_dict(self):
        return asdict(self)


def _probs_2d(probs):
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise InvalidArgumentError(f"expected an (n, M) probability matrix, got shape {p.shape}")
    return p


def source_cross_entropy(probs, labels) -> float:
    p = _probs_2d(probs)
    y = np.asarray(labels, dtype=np.intp)
    if y.shape != (p.shape[0],):
        raise InvalidArgumentError(f"{y.size} labels for {p.shape[0]} rows")
    if y.size == 0:
        raise InvalidArgumentError("empty batch")
    if y.min() < 0 or y.max() >= p.shape[1]:
        raise InvalidArgumentError("label out of range")
    picked = np.maximum(p[np.arange(len(y)), y], PROB_EPS)
    return float(-np.log(picked).mean())


def source_ce_logit_grad(probs, labels) -> np.ndarray:
    """d source_cross_entropy / d logits (softmax head)."""
    p = _probs_2d(probs)
    g = p.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def auxiliary_distribution(target_probs, epoch: int = 0) -> AuxiliaryDistribution:
    """Soft pseudo labels z_ic proportional to p_ic / sqrt(sum_i p_ic), rows normalised."""
    p = _probs_2d(target_probs)
    if p.shape[0] < 1:
        raise InvalidArgumentError("need at least one target row")
    mass = p.sum(axis=0)
    if np.any(mass <= 0):
        logger.warning("auxiliary distribution: empty class column(s) %s clamped",
                       np.flatnonzero(mass <= 0).tolist())
    z = p / np.sqrt(np.maximum(mass, PROB_EPS))
    z /= z.sum(axis=1, keepdims=True)
    return AuxiliaryDistribution(z, epoch)


def target_loss(target_probs, z) -> float:
    p = _probs_2d(target_probs)
    zz = z.z if isinstance(z, AuxiliaryDistribution) else np.asarray(z, dtype=np.float64)
    if zz.shape != p.shape:
        raise InvalidArgumentError(f"z shape {zz.shape} != probs shape {p.shape}")
    return float(-(zz * np.log(np.maximum(p, PROB_EPS))).sum(axis=1).mean())


def target_logit_grad(target_probs, z) -> np.ndarray:
    """d target_loss / d logits with z held fixed; rows of z sum to 1."""
    zz = z.z if isinstance(z, AuxiliaryDistribution) else np.asarray(z, dtype=np.float64)
    p = _probs_2d(target_probs)
    return (p * zz.sum(axis=1, keepdims=True) - zz) / p.shape[0]


def total_loss(source_ce: float, target_aux: float, mirror_f: float = 0.0,
               mirror_g: float = 0.0, gamma: float = 1.0) -> LossBreakdown:
    if gamma < 0:
        raise InvalidArgumentError("gamma must be non-negative")
    total = source_ce + target_aux + gamma * (mirror_f + mirror_g)
    return LossBreakdown(source_ce, target_aux, mirror_f, mirror_g, total, gamma)
