"""Class anchors: labeled centers, k-means pseudo labels, 0.5/0.5 mixing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericalFailure


@dataclass
class ClassAnchors:
    centers: np.ndarray  # (M, d)
    counts: np.ndarray  # (M,)
    layer_tag: str = "f"

    @property
    def valid(self) -> np.ndarray:
        """Classes with at least one member; count-0 classes are flagged."""
        return self.counts > 0

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]

    def copy(self) -> "ClassAnchors":
        return ClassAnchors(self.centers.copy(), self.counts.copy(), self.layer_tag)


@dataclass
class PseudoLabels:
    labels: np.ndarray
    assignment_distances: np.ndarray
    n_iter: int = 0
    objective_history: list = field(default_factory=list)


def labeled_anchors(features, labels, n_classes: int, layer_tag: str = "f") -> ClassAnchors:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgumentError("features must be a non-empty (n, d) array")
    if y.shape != (x.shape[0],):
        raise InvalidArgumentError("one label per feature row required")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidArgumentError(f"labels must lie in [0, {n_classes})")
    counts = np.bincount(y, minlength=n_classes)
    sums = np.zeros((n_classes, x.shape[1]))
    np.add.at(sums, y, x)
    centers = np.zeros_like(sums)
    has = counts > 0
    centers[has] = sums[has] / counts[has, None]
    return ClassAnchors(centers, counts, layer_tag)


def _assign(x, centers, allowed):
    sq = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    sq[:, ~allowed] = np.inf
    labels = np.argmin(sq, axis=1)
    return labels, sq[np.arange(len(x)), labels]


def _update(x, labels, centers):
    m = centers.shape[0]
    counts = np.bincount(labels, minlength=m)
    sums = np.zeros_like(centers)
    np.add.at(sums, labels, x)
    new = centers.copy()
    # empty clusters keep their previous center
    has = counts > 0
    new[has] = sums[has] / counts[has, None]
    return new, counts


def kmeans_objective(x, centers, labels) -> float:
    return float(((x - centers[labels]) ** 2).sum())


def kmeans_pseudo_labels(target_features, init: ClassAnchors, max_iters: int = 100,
                         tol: float = 1e-6, check_monotone: bool = True):
    """Lloyd iterations seeded at ``init``; returns ``(PseudoLabels, ClassAnchors)``.

    Flagged (empty) init classes never receive members. Iteration stops when
    the assignment is unchanged, the largest center move is below ``tol``, or
    ``max_iters`` update steps have run.
    """
    x = np.asarray(target_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != init.centers.shape[1]:
        raise InvalidArgumentError("target features must match init center dimension")
    if max_iters < 1:
        raise InvalidArgumentError("max_iters must be >= 1")
    allowed = init.valid.copy()
    if not allowed.any():
        raise InvalidArgumentError("every init center is flagged")

    centers = init.centers.copy()
    scale = float(np.square(x).sum())
    labels, dist = _assign(x, centers, allowed)
    history = [kmeans_objective(x, centers, labels)]
    if not np.isfinite(history[0]):
        raise NumericalFailure("k-means objective is not finite", dict(objective=history[0]))
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        new_centers, _ = _update(x, labels, centers)
        history.append(kmeans_objective(x, new_centers, labels))
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        new_labels, dist = _assign(x, centers, allowed)
        history.append(kmeans_objective(x, centers, new_labels))
        changed = np.any(new_labels != labels)
        labels = new_labels
        if check_monotone:
            # rounding in the center means scales with |x|^2, not with the objective
            slack = 1e-9 * max(1.0, history[-3]) + 1e-20 * scale
            assert history[-1] <= history[-2] + slack and history[-2] <= history[-3] + slack, \
                "k-means objective increased"
        if not changed or shift < tol:
            break

    centers, counts = _update(x, labels, centers)
    pseudo = PseudoLabels(labels, np.sqrt(dist), n_iter, history)
    return pseudo, ClassAnchors(centers, counts, init.layer_tag)


def mixed_anchors(source: ClassAnchors, target: ClassAnchors, weight: float = 0.5) -> ClassAnchors:
    """Average of source and target centers.

    Where only one parent has members the mixed center falls back to that
    parent; where neither does, the class stays flagged.
    """
    if source.centers.shape != target.centers.shape:
        raise InvalidArgumentError(
            f"anchor shape mismatch: {source.centers.shape} vs {target.centers.shape}")
    s_ok, t_ok = source.valid, target.valid
    centers = weight * source.centers + (1.0 - weight) * target.centers
    only_s = s_ok & ~t_ok
    only_t = t_ok & ~s_ok
    centers[only_s] = source.centers[only_s]
    centers[only_t] = target.centers[only_t]
    return ClassAnchors(centers, source.counts + target.counts, source.layer_tag)


def anchor_gap(source: ClassAnchors, target: ClassAnchors) -> float:
    """Mean ||mu_c^s - mu_c^t|| over classes populated in both domains."""
    both = source.valid & target.valid
    if not both.any():
        return float("nan")
    return float(np.linalg.norm(source.centers[both] - target.centers[both], axis=1).mean())


def inter_class_spread(anchors: ClassAnchors) -> float:
    """Mean pairwise distance between distinct populated centers."""
    c = anchors.centers[anchors.valid]
    if len(c) < 2:
        return float("nan")
    d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
    iu = np.triu_indices(len(c), 1)
    return float(d[iu].mean())
