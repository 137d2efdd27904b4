"""Small MLP standing in for the backbone: x -> f (tanh MLP) -> g (affine) -> logits.

Gradients are written out by hand; ``backward`` accepts upstream gradients
on the logits and, optionally, directly on the ``f`` and ``g`` features
(where the mirror losses attach).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, InvalidArgumentError
from .numerics import softmax_rows

CHECKPOINT_MAGIC = "# mirror-da checkpoint"
CHECKPOINT_VERSION = 1

_version_counter = itertools.count(1)

# per-group learning-rate multipliers: new layers train 10x faster than the backbone
DEFAULT_MULTIPLIERS = {"bk": 1.0, "fc": 10.0, "cls": 10.0}


@dataclass
class ModelParams:
    arrays: dict
    backbone_layers: int
    version: int = field(default_factory=lambda: next(_version_counter))

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def input_dim(self) -> int:
        return self.arrays["bk0_W"].shape[0]

    @property
    def n_classes(self) -> int:
        return self.arrays["cls_W"].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.backbone_layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def group_of(name: str) -> str:
    return name.split("_", 1)[0].rstrip("0123456789")


def init_params(input_dim: int, n_classes: int, d_f: int = 16, d_g: int = 8, hidden: int = 32,
                backbone_layers: int = 2, rng=None, scale: float = 0.1) -> ModelParams:
    """Uniform(-scale, scale) initialisation from ``rng``."""
    if backbone_layers not in (1, 2):
        raise InvalidArgumentError("backbone_layers must be 1 or 2")
    rng = np.random.default_rng(rng)
    widths = [input_dim] + ([hidden] if backbone_layers == 2 else []) + [d_f]
    arrays = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        arrays[f"bk{i}_W"] = rng.uniform(-scale, scale, size=(a, b))
        arrays[f"bk{i}_b"] = rng.uniform(-scale, scale, size=b)
    arrays["fc_W"] = rng.uniform(-scale, scale, size=(d_f, d_g))
    arrays["fc_b"] = rng.uniform(-scale, scale, size=d_g)
    arrays["cls_W"] = rng.uniform(-scale, scale, size=(d_g, n_classes))
    arrays["cls_b"] = rng.uniform(-scale, scale, size=n_classes)
    return ModelParams(arrays, backbone_layers)


@dataclass
class ForwardTrace:
    x: np.ndarray
    hidden: list
    f: np.ndarray
    g: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    version: int


def forward(params: ModelParams, batch) -> ForwardTrace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != params.input_dim:
        raise InvalidArgumentError(f"input dim {x.shape[1]} != model input dim {params.input_dim}")
    acts = [x]
    h = x
    for i in range(params.backbone_layers):
        h = np.tanh(h @ params[f"bk{i}_W"] + params[f"bk{i}_b"])
        acts.append(h)
    f = h
    g = f @ params["fc_W"] + params["fc_b"]
    logits = g @ params["cls_W"] + params["cls_b"]
    return ForwardTrace(x, acts, f, g, logits, softmax_rows(logits), params.version)


def backward(params: ModelParams, trace: ForwardTrace, d_logits=None, d_f=None, d_g=None) -> dict:
    """Reverse-mode gradients of a loss given its gradients on logits, g and f."""
    if trace.version != params.version:
        raise ConsistencyError("trace was produced by a different parameter version")
    n = trace.x.shape[0]
    if d_logits is None:
        d_logits = np.zeros((n, params.n_classes))
    grads = {}
    grads["cls_W"] = trace.g.T @ d_logits
    grads["cls_b"] = d_logits.sum(axis=0)
    dg = d_logits @ params["cls_W"].T
    if d_g is not None:
        dg = dg + d_g
    grads["fc_W"] = trace.f.T @ dg
    grads["fc_b"] = dg.sum(axis=0)
    dh = dg @ params["fc_W"].T
    if d_f is not None:
        dh = dh + d_f
    for i in reversed(range(params.backbone_layers)):
        out = trace.hidden[i + 1]
        dz = dh * (1.0 - out * out)
        grads[f"bk{i}_W"] = trace.hidden[i].T @ dz
        grads[f"bk{i}_b"] = dz.sum(axis=0)
        if i:
            dh = dz @ params[f"bk{i}_W"].T
    return grads


@dataclass(frozen=True)
class LrSchedule:
    eta0: float = 0.001
    alpha: float = 10.0
    beta: float = 0.75

    def __post_init__(self):
        if not self.eta0 > 0:
            raise InvalidArgumentError("eta0 must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidArgumentError("alpha and beta must be non-negative")


def lr_at(schedule: LrSchedule, p: float) -> float:
    """Annealed rate eta0 * (1 + alpha p) ** -beta for progress p in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"progress must lie in [0, 1], got {p}")
    if p == 0.0:
        return schedule.eta0
    return schedule.eta0 * (1.0 + schedule.alpha * p) ** (-schedule.beta)


def sgd_step(params: ModelParams, grads: dict, lr: float, multipliers=None, momentum: float = 0.0,
             weight_decay: float = 0.0, velocity: dict | None = None) -> ModelParams:
    """Plain SGD by default; ``velocity`` is updated in place when momentum is used."""
    mult = DEFAULT_MULTIPLIERS if multipliers is None else multipliers
    new = {}
    for name, theta in params.arrays.items():
        step = grads[name]
        if step.shape != theta.shape:
            raise InvalidArgumentError(f"gradient shape mismatch for {name}")
        if weight_decay:
            step = step + weight_decay * theta
        if momentum:
            if velocity is None:
                raise InvalidArgumentError("momentum requires a velocity dict")
            v = momentum * velocity.get(name, 0.0) + step
            velocity[name] = v
            step = v
        new[name] = theta - lr * mult.get(group_of(name), 1.0) * step
    return ModelParams(new, params.backbone_layers)


def save_checkpoint(params: ModelParams, path) -> None:
    """Plain-text checkpoint; values at 17 significant digits round-trip exactly."""
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}",
             f"backbone_layers {params.backbone_layers}"]
    for name, arr in params.arrays.items():
        lines.append(f"array {name} {' '.join(str(s) for s in arr.shape)}")
        lines.append(" ".join(f"{v:.17g}" for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise InvalidArgumentError(f"{path} is not a checkpoint file")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version {version}")
    backbone_layers = int(lines[1].split()[1])
    arrays = {}
    for header, body in zip(lines[2::2], lines[3::2]):
        _, name, *shape = header.split()
        shape = tuple(int(s) for s in shape)
        values = np.array([float(v) for v in body.split()], dtype=np.float64)
        arrays[name] = values.reshape(shape)
    return ModelParams(arrays, backbone_layers)
