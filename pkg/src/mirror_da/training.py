"""The epoch/step training loop and the full model objective.

Per epoch: features for both domains are computed with the current
weights.  Then come the source class anchors, k-means target anchors seeded
from them, the mixed anchors, and the auxiliary distribution ``z``.  All of
these stay fixed while the mini-batch SGD steps run.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment import layer_mirror_loss, mirror_loss, relative_error
from .mirror import mirror_table
from .anchors import (ClassAnchors, PseudoLabels, anchor_gap, inter_class_spread,
                      kmeans_pseudo_labels, labeled_anchors, mixed_anchors)
from .config import RunConfig
from .errors import InvalidArgumentError, NumericalFailure
from .network import ModelParams, backward, forward, init_params, lr_at, sgd_step
from .objective import (AuxiliaryDistribution, LossBreakdown, auxiliary_distribution,
                        source_ce_logit_grad, source_cross_entropy, target_logit_grad,
                        target_loss, total_loss)

logger = logging.getLogger(__name__)

LAYERS = ("f", "g")


@dataclass
class EpochState:
    """Quantities frozen for one epoch (no gradient flows into them)."""

    source_anchors: dict
    target_anchors: dict
    mixed: dict
    pseudo: dict
    z: AuxiliaryDistribution
    target_probs: np.ndarray
    source_probs: np.ndarray


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    source_ce: float
    target_aux: float
    mirror_f: float
    mirror_g: float
    total: float
    gamma: float
    target_acc: float = math.nan
    source_acc: float = math.nan
    anchor_gap_f: float = math.nan
    anchor_gap_g: float = math.nan
    inter_class_f: float = math.nan
    inter_class_g: float = math.nan
    pseudo_agree_f: float = math.nan
    pseudo_agree_g: float = math.nan

    def as_dict(self):
        return asdict(self)

    @property
    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(self.source_ce, self.target_aux, self.mirror_f, self.mirror_g,
                             self.total, self.gamma)


@dataclass
class ObjectiveAnchors:
    """Anchors handed to the objective, per feature layer."""

    shared: dict
    target: dict | None = None


def compute_objective(params: ModelParams, xs, ys, xt, z, anchors: ObjectiveAnchors,
                      config: RunConfig, source_rows=None, target_rows=None, tables=None):
    """Total loss and parameter gradients for one step.

    With ``*_rows`` given, ``xs`` / ``xt`` are whole domains that serve as
    mirror pools and only the selected rows act as the batch. ``z`` always
    matches the target batch rows.  ``tables`` maps a layer to a frozen
    ``(source_table, target_table)`` pair; without it mirrors are searched
    afresh.
    """
    tr_s = forward(params, xs)
    tr_t = forward(params, xt)
    s_rows = np.arange(len(xs)) if source_rows is None else source_rows
    t_rows = np.arange(len(xt)) if target_rows is None else target_rows
    ys_b = np.asarray(ys)[s_rows] if source_rows is not None else np.asarray(ys)

    ps, pt = tr_s.probs[s_rows], tr_t.probs[t_rows]
    ce = source_cross_entropy(ps, ys_b)
    aux = target_loss(pt, z)
    dls = np.zeros_like(tr_s.logits)
    dlt = np.zeros_like(tr_t.logits)
    np.add.at(dls, s_rows, source_ce_logit_grad(ps, ys_b))
    np.add.at(dlt, t_rows, target_logit_grad(pt, z))

    mirror_vals = {"f": 0.0, "g": 0.0}
    feat_grads = {("s", "f"): None, ("s", "g"): None, ("t", "f"): None, ("t", "g"): None}
    if config.gamma > 0:
        mcfg = config.mirror_config()
        for layer in config.layers():
            fs = tr_s.f if layer == "f" else tr_s.g
            ft = tr_t.f if layer == "f" else tr_t.g
            extra = dict(source_rows=source_rows, target_rows=target_rows,
                         target_anchors=None if anchors.target is None else anchors.target[layer],
                         symmetric=config.symmetric_kl)
            if tables is not None and layer in tables:
                res = mirror_loss(fs, ft, *tables[layer], anchors.shared[layer], mcfg.distance,
                                  **extra)
            else:
                res = layer_mirror_loss(fs, ft, anchors.shared[layer], mcfg, **extra)
            mirror_vals[layer] = res.value
            feat_grads[("s", layer)] = config.gamma * res.grad_source
            feat_grads[("t", layer)] = config.gamma * res.grad_target

    breakdown = total_loss(ce, aux, mirror_vals["f"], mirror_vals["g"], config.gamma)
    gs = backward(params, tr_s, dls, feat_grads[("s", "f")], feat_grads[("s", "g")])
    gt = backward(params, tr_t, dlt, feat_grads[("t", "f")], feat_grads[("t", "g")])
    grads = {k: gs[k] + gt[k] for k in gs}
    return breakdown, grads


def mirror_tables_for(params: ModelParams, xs, xt, config: RunConfig,
                      source_rows=None, target_rows=None) -> dict:
    """Mirror tables at the current weights, per active layer."""
    tr_s, tr_t = forward(params, xs), forward(params, xt)
    mcfg = config.mirror_config()
    out = {}
    for layer in config.layers():
        fs, ft = _layer(tr_s, layer), _layer(tr_t, layer)
        sq = fs if source_rows is None else fs[source_rows]
        tq = ft if target_rows is None else ft[target_rows]
        out[layer] = (mirror_table(sq, ft, mcfg), mirror_table(tq, fs, mcfg))
    return out


def objective_gradient_check(params: ModelParams, xs, ys, xt, z, anchors: ObjectiveAnchors,
                             config: RunConfig, step: float = 1e-5) -> float:
    """Max relative error of parameter gradients against central differences.

    Mirror tables are frozen at the unperturbed weights.
    """
    tables = mirror_tables_for(params, xs, xt, config) if config.gamma > 0 else None
    _, analytic = compute_objective(params, xs, ys, xt, z, anchors, config, tables=tables)
    worst = 0.0
    for name, arr in params.arrays.items():
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sign in (1.0, -1.0):
                pert = params.copy()
                pert.arrays[name][idx] = arr[idx] + sign * step
                vals.append(compute_objective(pert, xs, ys, xt, z, anchors, config,
                                              tables=tables)[0].total)
            numeric[idx] = (vals[0] - vals[1]) / (2 * step)
        worst = max(worst, relative_error(analytic[name], numeric))
    return worst


def _layer(trace, layer):
    return trace.f if layer == "f" else trace.g


def epoch_state(params: ModelParams, xs, ys, xt, n_classes: int, config: RunConfig,
                epoch: int) -> EpochState:
    tr_s = forward(params, xs)
    tr_t = forward(params, xt)
    for tr in (tr_s, tr_t):
        if not (np.all(np.isfinite(tr.g)) and np.all(np.isfinite(tr.probs))):
            raise NumericalFailure(f"non-finite features entering epoch {epoch}", dict(epoch=epoch))
    src, tgt, mixed, pseudo = {}, {}, {}, {}
    for layer in LAYERS:
        src[layer] = labeled_anchors(_layer(tr_s, layer), ys, n_classes, layer)
        pseudo[layer], tgt[layer] = kmeans_pseudo_labels(
            _layer(tr_t, layer), src[layer], config.kmeans_max_iters, config.kmeans_tol)
        mixed[layer] = mixed_anchors(src[layer], tgt[layer])
    z = auxiliary_distribution(tr_t.probs, epoch)
    return EpochState(src, tgt, mixed, pseudo, z, tr_t.probs, tr_s.probs)


class BatchSampler:
    """Independent per-domain shuffles; the smaller domain cycles.

    Each batch's indices are sorted, so a batch that covers a whole domain
    is exactly that domain in its original order.
    """

    def __init__(self, n: int, batch: int, rng):
        self.n = n
        self.batch = min(batch, n)
        self.rng = rng
        self._stream = np.empty(0, dtype=np.intp)

    def epoch(self, steps: int):
        need = steps * self.batch
        parts = [self._stream] if self._stream.size else []
        have = self._stream.size
        while have < need:
            perm = self.rng.permutation(self.n)
            parts.append(perm)
            have += perm.size
        stream = np.concatenate(parts)
        # leftovers of a partial permutation are discarded at the epoch boundary
        self._stream = np.empty(0, dtype=np.intp)
        return [np.sort(stream[i * self.batch:(i + 1) * self.batch]) for i in range(steps)]


def steps_per_epoch(n_source: int, n_target: int, batch: int) -> int:
    return max(1, max(n_source, n_target) // batch)


def _features(data):
    feats = np.asarray(data.features if hasattr(data, "features") else data, dtype=np.float64)
    return feats[:, None] if feats.ndim == 1 else feats


def train(config: RunConfig, source, target, monitor=None, init: ModelParams | None = None,
          callback=None):
    """Run the full adaptation loop.

    ``source`` needs ``features``, ``labels`` and ``n_classes``.  Only
    ``target.features`` is read, so an :class:`~mirror_da.synthgen.UnlabeledView`
    is enough.  ``monitor`` (optional) holds the target labels and produces
    accuracy metrics, kept apart from the training data path.

    Returns ``(params, [EpochMetrics, ...])``.
    """
    config.validate()
    if config.seed is None:
        raise InvalidArgumentError("a seed is required")
    xs = _features(source)
    ys = np.asarray(source.labels, dtype=np.intp)
    xt = _features(target)
    n_classes = source.n_classes
    if xs.shape[1] != xt.shape[1]:
        raise InvalidArgumentError("source and target input dimensions differ")
    if len(xs) == 0 or len(xt) == 0:
        raise InvalidArgumentError("empty domain")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(xt))):
        raise InvalidArgumentError("input features must be finite")

    init_rng, batch_rng = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(config.seed).spawn(2))
    params = init.copy() if init is not None else init_params(
        xs.shape[1], n_classes, config.d_f, config.d_g, config.hidden, config.backbone_layers,
        init_rng, config.init_scale)
    multipliers = {"bk": 1.0, "fc": config.fc_lr_mult, "cls": config.fc_lr_mult}
    velocity = {} if config.momentum else None
    sched = config.schedule()
    n_steps = steps_per_epoch(len(xs), len(xt), config.batch_size)
    s_sampler = BatchSampler(len(xs), config.batch_size, batch_rng)
    t_sampler = BatchSampler(len(xt), config.batch_size, batch_rng)
    full_pool = config.mirror_pool == "full"

    metrics = []
    if config.epochs == 0:
        return params, metrics
    state = epoch_state(params, xs, ys, xt, n_classes, config, 0)
    for epoch in range(config.epochs):
        lr = lr_at(sched, epoch / config.epochs)
        if config.per_domain_anchors:
            anchors = ObjectiveAnchors(state.source_anchors, state.target_anchors)
        else:
            anchors = ObjectiveAnchors(state.mixed)
        sums = np.zeros(5)
        for bs, bt in zip(s_sampler.epoch(n_steps), t_sampler.epoch(n_steps)):
            zb = state.z.z[bt]
            if full_pool:
                parts, grads = compute_objective(params, xs, ys, xt, zb, anchors, config, bs, bt)
            else:
                parts, grads = compute_objective(params, xs[bs], ys[bs], xt[bt], zb, anchors, config)
            vals = np.array([parts.source_ce, parts.target_aux, parts.mirror_f, parts.mirror_g,
                             parts.total])
            if not np.all(np.isfinite(vals)):
                raise NumericalFailure(f"non-finite loss at epoch {epoch}",
                                       dict(epoch=epoch, **parts.as_dict()))
            sums += vals
            params = sgd_step(params, grads, lr, multipliers, config.momentum,
                              config.weight_decay, velocity)
        if not params.all_finite():
            raise NumericalFailure(f"non-finite parameters after epoch {epoch}", dict(epoch=epoch))
        mean = sums / n_steps
        state = epoch_state(params, xs, ys, xt, n_classes, config, epoch + 1)
        row = EpochMetrics(epoch, lr, *mean.tolist(), config.gamma)
        _fill_structure_metrics(row, state, ys)
        if monitor is not None:
            monitor.update(row, state)
        metrics.append(row)
        if callback is not None:
            callback(row, params)
    return params, metrics


def _fill_structure_metrics(row: EpochMetrics, state: EpochState, ys):
    row.source_acc = float((state.source_probs.argmax(axis=1) == ys).mean())
    row.anchor_gap_f = anchor_gap(state.source_anchors["f"], state.target_anchors["f"])
    row.anchor_gap_g = anchor_gap(state.source_anchors["g"], state.target_anchors["g"])
    row.inter_class_f = inter_class_spread(state.mixed["f"])
    row.inter_class_g = inter_class_spread(state.mixed["g"])
