"""Synthetic domain pairs with controlled sampling bias.

Two generators:

* ``gen_dilemma_1d``: the one-dimensional example.  Source background is
  uniform on [-3, 5] with a class-1 bump N(1, 1) truncated to that support.
  The target is the same picture moved right by 7.  A ``bias`` knob drops
  class-1 draws on one side of the mode, on opposite sides in the two domains.
* ``gen_biased_patterns``: each class is a mixture of sub-patterns whose
  mixing ratios differ per domain, plus an optional global affine shift of
  the target.

Target datasets carry their labels for evaluation only; the training-side
view (:meth:`DomainDataset.unlabeled`) has no way to reach them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import HiddenLabelError, InvalidArgumentError


@dataclass(frozen=True)
class UnlabeledView:
    features: np.ndarray
    domain_tag: str = "target"

    def __len__(self):
        return self.features.shape[0]


@dataclass
class DomainDataset:
    features: np.ndarray
    _labels: np.ndarray | None
    domain_tag: str
    n_classes: int
    hidden: bool = False
    patterns: np.ndarray | None = None
    generator_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if self.features.shape[0] < 1:
            raise InvalidArgumentError("a dataset needs at least one sample")
        if self._labels is not None:
            self._labels = np.asarray(self._labels, dtype=np.intp)
            if self._labels.min() < 0 or self._labels.max() >= self.n_classes:
                raise InvalidArgumentError("labels out of range")

    def __len__(self):
        return self.features.shape[0]

    @property
    def labels(self) -> np.ndarray:
        if self.hidden:
            raise HiddenLabelError(f"labels of the {self.domain_tag} dataset are hidden")
        if self._labels is None:
            raise HiddenLabelError("dataset has no labels")
        return self._labels

    def reveal_labels(self) -> np.ndarray:
        """Evaluation-side access to the labels, hidden or not."""
        if self._labels is None:
            raise HiddenLabelError("dataset has no labels")
        return self._labels

    def unlabeled(self) -> UnlabeledView:
        return UnlabeledView(self.features, self.domain_tag)


@dataclass(frozen=True)
class DilemmaSpec:
    source_support: tuple = (-3.0, 5.0)
    target_support: tuple = (4.0, 12.0)
    source_mean: float = 1.0
    target_mean: float = 8.0
    std: float = 1.0

    @property
    def offset(self) -> float:
        return self.target_mean - self.source_mean

    def validate(self):
        for lo, hi in (self.source_support, self.target_support):
            if not lo < hi:
                raise InvalidArgumentError("support must satisfy lo < hi")
        if not self.std > 0:
            raise InvalidArgumentError("std must be positive")
        if not self.source_support[0] <= self.source_mean <= self.source_support[1]:
            raise InvalidArgumentError("source mean outside its support")
        if not self.target_support[0] <= self.target_mean <= self.target_support[1]:
            raise InvalidArgumentError("target mean outside its support")


def truncated_normal(rng, n, mean, std, lo, hi, keep_right=1.0, keep_left=1.0):
    """Rejection sampler for N(mean, std) restricted to [lo, hi].

    ``keep_left`` / ``keep_right`` are acceptance probabilities for draws
    below / above the mode, used to inject one-sided sampling bias.
    """
    out = np.empty(0)
    while out.size < n:
        draw = rng.normal(mean, std, size=max(2 * (n - out.size), 16))
        ok = (draw >= lo) & (draw <= hi)
        keep = np.where(draw < mean, keep_left, keep_right)
        ok &= rng.uniform(size=draw.size) < keep
        out = np.concatenate([out, draw[ok]])
    out = out[:n]
    assert np.all((out >= lo) & (out <= hi)), "truncated normal leaked outside its support"
    return out


def _domain_rngs(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]


def gen_dilemma_1d(spec: DilemmaSpec = DilemmaSpec(), n_source: int = 200, n_target: int = 200,
                   seed: int = 0, class_prior: float = 0.5, bias: float = 0.0):
    """Two-class 1-D domains: class 1 from the truncated normal, class 0 uniform.

    ``bias`` in [0, 1] is the probability of rejecting a class-1 draw on the
    disfavoured side of the mode (right side for source, left for target).
    Returns ``(source, target)``; the target's labels are hidden.
    """
    spec.validate()
    if n_source < 2 or n_target < 2:
        raise InvalidArgumentError("need at least 2 samples per domain")
    if not 0.0 < class_prior < 1.0:
        raise InvalidArgumentError("class_prior must lie in (0, 1)")
    if not 0.0 <= bias <= 1.0:
        raise InvalidArgumentError("bias must lie in [0, 1]")
    provenance = dict(kind="dilemma_1d", seed=seed, class_prior=class_prior, bias=bias,
                      spec=spec.__dict__)
    out = []
    domains = [
        ("source", n_source, spec.source_support, spec.source_mean, dict(keep_right=1.0 - bias)),
        ("target", n_target, spec.target_support, spec.target_mean, dict(keep_left=1.0 - bias)),
    ]
    for rng, (tag, n, (lo, hi), mean, keep) in zip(_domain_rngs(seed), domains):
        y = (rng.uniform(size=n) < class_prior).astype(np.intp)
        x = rng.uniform(lo, hi, size=n)
        n1 = int(y.sum())
        x[y == 1] = truncated_normal(rng, n1, mean, spec.std, lo, hi, **keep)
        # sub-pattern: 0 background, 1 class-1 left of the mode, 2 right of it
        pattern = np.where(y == 1, np.where(x < mean, 1, 2), 0)
        out.append(DomainDataset(x[:, None], y, tag, 2, hidden=(tag == "target"),
                                 patterns=pattern, generator_spec=provenance))
    return out[0], out[1]


@dataclass
class PatternSpec:
    """Per-class sub-pattern mixtures.

    ``means[c]`` is a list of component mean vectors for class ``c``;
    ``scales[c]`` their isotropic standard deviations.  ``source_ratios[c]``
    and ``target_ratios[c]`` give the mixing ratios in each domain.  The
    target is finally mapped by ``x @ target_linear.T + target_shift``.
    """

    means: list
    scales: list
    source_ratios: list
    target_ratios: list
    class_prior: list | None = None
    target_shift: list | None = None
    target_linear: list | None = None

    @property
    def n_classes(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return len(self.means[0][0])

    def validate(self):
        m = self.n_classes
        if m < 1:
            raise InvalidArgumentError("need at least one class")
        for name in ("scales", "source_ratios", "target_ratios"):
            if len(getattr(self, name)) != m:
                raise InvalidArgumentError(f"{name} must have one entry per class")
        for c in range(m):
            k = len(self.means[c])
            if k < 1:
                raise InvalidArgumentError(f"class {c} has no components")
            if any(len(mu) != self.dim for mu in self.means[c]):
                raise InvalidArgumentError("component means must share one dimension")
            for ratios in (self.source_ratios[c], self.target_ratios[c]):
                r = np.asarray(ratios, dtype=float)
                if r.shape != (k,) or np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
                    raise InvalidArgumentError(f"class {c}: ratios must be {k} non-negative values summing to 1")
            if len(self.scales[c]) != k or any(s <= 0 for s in self.scales[c]):
                raise InvalidArgumentError(f"class {c}: one positive scale per component required")
        if self.class_prior is not None:
            p = np.asarray(self.class_prior, dtype=float)
            if p.shape != (m,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise InvalidArgumentError("class_prior must be a distribution over classes")


def default_pattern_spec(shift: float = 3.0) -> PatternSpec:
    """Three classes, two sub-patterns each, in 2-D, with strongly skewed ratios.

    In each class a sub-pattern that is absent or rare in one domain is
    common in the other.
    """
    means = [
        [[0.0, 0.0], [0.0, 2.0]],
        [[3.0, 0.0], [3.0, 2.0]],
        [[1.5, 4.0], [1.5, 6.0]],
    ]
    scales = [[0.5, 0.5]] * 3
    source = [[1.0, 0.0], [0.975, 0.025], [0.85, 0.15]]
    target = [[0.5, 0.5], [0.6, 0.4], [0.25, 0.75]]
    return PatternSpec(means, scales, source, target, target_shift=[shift, shift])


def gen_biased_patterns(spec: PatternSpec | None = None, n_source: int = 200, n_target: int = 200,
                        seed: int = 0):
    """Draw class, then sub-pattern (by the domain's ratios), then a Gaussian point."""
    spec = spec or default_pattern_spec()
    spec.validate()
    m, dim = spec.n_classes, spec.dim
    prior = np.full(m, 1.0 / m) if spec.class_prior is None else np.asarray(spec.class_prior, float)
    provenance = dict(kind="biased_patterns", seed=seed, spec=spec.__dict__)
    out = []
    plan = [("source", n_source, spec.source_ratios), ("target", n_target, spec.target_ratios)]
    for rng, (tag, n, ratios) in zip(_domain_rngs(seed), plan):
        if n < 1:
            raise InvalidArgumentError("need at least one sample per domain")
        y = rng.choice(m, size=n, p=prior)
        comp = np.empty(n, dtype=np.intp)
        x = np.empty((n, dim))
        for i in range(n):
            c = y[i]
            comp[i] = rng.choice(len(ratios[c]), p=ratios[c])
            x[i] = rng.normal(spec.means[c][comp[i]], spec.scales[c][comp[i]])
        if tag == "target":
            if spec.target_linear is not None:
                x = x @ np.asarray(spec.target_linear, dtype=float).T
            if spec.target_shift is not None:
                x = x + np.asarray(spec.target_shift, dtype=float)
        out.append(DomainDataset(x, y, tag, m, hidden=(tag == "target"), patterns=comp,
                                 generator_spec=provenance))
    return out[0], out[1]


@dataclass
class MomentMatch:
    features: np.ndarray
    offset: np.ndarray
    scale: np.ndarray
    clamped_dims: list


def moment_match_baseline(source: DomainDataset, target) -> MomentMatch:
    """Shift and scale target features to the source mean and per-dimension std."""
    xs = source.features
    xt = target.features
    if len(xs) == 0 or len(xt) == 0:
        raise InvalidArgumentError("moment matching needs non-empty domains")
    ms, mt = xs.mean(axis=0), xt.mean(axis=0)
    ss, st = xs.std(axis=0), xt.std(axis=0)
    bad = (st == 0) | (ss == 0)
    scale = np.where(bad, 1.0, ss / np.where(bad, 1.0, st))
    feats = (xt - mt) * scale + ms
    return MomentMatch(feats, ms - mt, scale, np.flatnonzero(bad).tolist())


def standardize_by_source(source: DomainDataset, target: DomainDataset):
    """Map both domains with the source per-dimension mean and std.

    Only source statistics are used, so the target's position relative to
    the source (the domain shift) is preserved.
    """
    mu = source.features.mean(axis=0)
    sd = source.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    out = []
    for ds in (source, target):
        spec = dict(ds.generator_spec, standardized=dict(mean=mu.tolist(), std=sd.tolist()))
        out.append(DomainDataset((ds.features - mu) / sd, ds._labels, ds.domain_tag, ds.n_classes,
                                 ds.hidden, ds.patterns, spec))
    return out[0], out[1]


def write_csv(path, *datasets: DomainDataset) -> None:
    """``dim_0..dim_{d-1},label,domain``; hidden labels are written as -1."""
    dim = datasets[0].features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"dim_{i}" for i in range(dim)] + ["label", "domain"])
        for ds in datasets:
            labels = np.full(len(ds), -1) if ds.hidden or ds._labels is None else ds._labels
            for row, lab in zip(ds.features, labels):
                w.writerow([repr(float(v)) for v in row] + [int(lab), ds.domain_tag])


def read_csv(path, n_classes: int | None = None) -> dict:
    """Inverse of :func:`write_csv`; returns ``{domain: DomainDataset}``."""
    rows: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["label", "domain"]:
            raise InvalidArgumentError(f"{path}: unexpected header {header}")
        for rec in reader:
            feats = [float(v) for v in rec[:-2]]
            rows.setdefault(rec[-1], ([], []))
            rows[rec[-1]][0].append(feats)
            rows[rec[-1]][1].append(int(rec[-2]))
    known = [max(labs) for _, labs in rows.values() if max(labs) >= 0]
    m = n_classes if n_classes is not None else (max(known) + 1 if known else 1)
    out = {}
    for tag, (feats, labs) in rows.items():
        labs = np.asarray(labs)
        hidden = bool(np.all(labs < 0))
        out[tag] = DomainDataset(np.asarray(feats), None if hidden else labs, tag, m, hidden=hidden)
    return out
