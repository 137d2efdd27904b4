"""Equivalence regularization: anchor-relative positions and the mirror loss.

The relative position of a point is ``softmax(-d(x, mu_c))`` over the
populated anchors.  The mirror loss averages ``KL(q(mirror) || q(sample))``
over the target batch and over the source batch.  Gradients are analytic
and flow into the batch features and, through the fixed mirror weights,
into the neighbor features that built each mirror.  Anchors get none.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .anchors import ClassAnchors
from .errors import InvalidArgumentError
from .mirror import DistanceKind, MirrorConfig, MirrorSample, MirrorTable, mirror_table
from .numerics import KL_EPS, kl_rows, softmax_rows

Mirrors = Union[MirrorTable, Sequence[MirrorSample]]


@dataclass
class RelativePosition:
    q: np.ndarray
    owner: object
    anchors_used: ClassAnchors


@dataclass
class MirrorLossValue:
    value: float
    target_terms: np.ndarray
    source_terms: np.ndarray
    grad_source: np.ndarray
    grad_target: np.ndarray

    @property
    def per_pair_terms(self) -> np.ndarray:
        return np.concatenate([self.target_terms, self.source_terms])


def _usable(anchors: ClassAnchors) -> np.ndarray:
    mask = anchors.valid
    if not mask.any():
        raise InvalidArgumentError("all anchors are flagged")
    return mask


def relative_positions(x, anchors: ClassAnchors, distance: DistanceKind = DistanceKind()):
    """Row-wise relative positions; returns ``(q, distances)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != anchors.centers.shape[1]:
        raise InvalidArgumentError("feature dimension does not match anchors")
    mask = _usable(anchors)
    dist = distance.pairwise(x, anchors.centers)
    return softmax_rows(-dist, mask[None, :]), dist


def relative_position(x, anchors: ClassAnchors, distance: DistanceKind = DistanceKind(),
                      owner=None) -> RelativePosition:
    q, _ = relative_positions(np.asarray(x, dtype=np.float64)[None, :], anchors, distance)
    return RelativePosition(q[0], owner, anchors)


def _positions_backward(x, anchors, distance, dist, grad_logits):
    """Map d loss / d(-dist) back onto the points ``x``."""
    g = -grad_logits * distance.grad_coef(dist)
    return g.sum(axis=1)[:, None] * x - g @ anchors.centers


def _kl_logit_grads(p, q, eps=KL_EPS):
    """KL(p||q) per row and its gradients w.r.t. the logits behind p and q."""
    terms = kl_rows(p, q, eps)
    pos = p > 0
    gp = np.where(pos, np.log(np.where(pos, p, 1.0)) - np.log(np.maximum(q, eps)), 0.0)
    grad_p = p * (gp - (p * gp).sum(axis=1, keepdims=True))
    hq = np.zeros_like(q)
    np.divide(-p, q, out=hq, where=q > eps)
    grad_q = q * (hq - (q * hq).sum(axis=1, keepdims=True))
    return terms, grad_p, grad_q


def _direction(points, rows, pool, table: MirrorTable, anchors_query, anchors_mirror, distance,
               symmetric):
    queries = points if rows is None else points[rows]
    n = queries.shape[0]
    if len(table) != n:
        raise InvalidArgumentError(f"{len(table)} mirrors for {n} queries")
    mirrors = table.vectors(pool)
    p, dist_m = relative_positions(mirrors, anchors_mirror, distance)
    q, dist_x = relative_positions(queries, anchors_query, distance)
    terms, ga, gb = _kl_logit_grads(p, q)
    if symmetric:
        rterms, rb, ra = _kl_logit_grads(q, p)
        terms, ga, gb = terms + rterms, ga + ra, gb + rb
    grad_m = _positions_backward(mirrors, anchors_mirror, distance, dist_m, ga / n)
    grad_q = _positions_backward(queries, anchors_query, distance, dist_x, gb / n)
    if rows is not None:
        full = np.zeros_like(points)
        np.add.at(full, rows, grad_q)
        grad_q = full
    return terms, grad_q, table.scatter(grad_m, len(pool))


def _as_table(m) -> MirrorTable:
    return m if isinstance(m, MirrorTable) else MirrorTable.from_samples(m)


def mirror_loss(source_batch, target_batch, source_mirrors: Mirrors, target_mirrors: Mirrors,
                anchors: ClassAnchors, distance: DistanceKind = DistanceKind(),
                target_anchors: ClassAnchors | None = None, symmetric: bool = False,
                source_rows=None, target_rows=None) -> MirrorLossValue:
    """Bidirectional mirror loss.

    ``target_mirrors[j]`` is the mirror of ``target_batch[j]`` drawn from the
    source batch, and vice versa.  With ``target_anchors`` left as None, the
    single ``anchors`` record (normally the mixed anchors) serves every
    relative position.  Passing ``target_anchors`` switches to per-domain
    anchors.  Each point is then measured against the anchors of the
    domain it lives in.

    ``source_rows`` / ``target_rows`` restrict the queries to a subset of
    rows while the full arrays stay the mirror pools; gradients are then
    returned for the full arrays.
    """
    xs = np.asarray(source_batch, dtype=np.float64)
    xt = np.asarray(target_batch, dtype=np.float64)
    src_anchors = anchors
    tgt_anchors = anchors if target_anchors is None else target_anchors
    t_terms, g_t, g_s_from_t = _direction(
        xt, target_rows, xs, _as_table(target_mirrors), tgt_anchors, src_anchors, distance,
        symmetric)
    s_terms, g_s, g_t_from_s = _direction(
        xs, source_rows, xt, _as_table(source_mirrors), src_anchors, tgt_anchors, distance,
        symmetric)
    value = float(t_terms.mean() + s_terms.mean())
    return MirrorLossValue(value, t_terms, s_terms, g_s + g_s_from_t, g_t + g_t_from_s)


def layer_mirror_loss(source_feats, target_feats, anchors: ClassAnchors,
                      config: MirrorConfig = MirrorConfig(), source_rows=None, target_rows=None,
                      **kwargs) -> MirrorLossValue:
    """Search mirrors in the opposite domain's features, then evaluate :func:`mirror_loss`."""
    sq = source_feats if source_rows is None else source_feats[source_rows]
    tq = target_feats if target_rows is None else target_feats[target_rows]
    t_table = mirror_table(tq, source_feats, config)
    s_table = mirror_table(sq, target_feats, config)
    return mirror_loss(source_feats, target_feats, s_table, t_table, anchors, config.distance,
                       source_rows=source_rows, target_rows=target_rows, **kwargs)


@dataclass
class GradCheckInstance:
    source: np.ndarray
    target: np.ndarray
    anchors: ClassAnchors
    config: MirrorConfig = MirrorConfig()
    target_anchors: ClassAnchors | None = None
    symmetric: bool = False


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def mirror_loss_gradient_check(inst: GradCheckInstance, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Mirror sets are searched once and frozen, as they are in training.
    """
    s_table = mirror_table(inst.source, inst.target, inst.config)
    t_table = mirror_table(inst.target, inst.source, inst.config)

    def loss(xs, xt):
        return mirror_loss(xs, xt, s_table, t_table, inst.anchors, inst.config.distance,
                           inst.target_anchors, inst.symmetric)

    base = loss(inst.source, inst.target)
    numeric = []
    for which in (0, 1):
        arrs = [inst.source.astype(np.float64).copy(), inst.target.astype(np.float64).copy()]
        grad = np.zeros_like(arrs[which])
        for idx in np.ndindex(grad.shape):
            old = arrs[which][idx]
            arrs[which][idx] = old + step
            up = loss(*arrs).value
            arrs[which][idx] = old - step
            down = loss(*arrs).value
            arrs[which][idx] = old
            grad[idx] = (up - down) / (2 * step)
        numeric.append(grad)
    return max(relative_error(base.grad_source, numeric[0]),
               relative_error(base.grad_target, numeric[1]))
