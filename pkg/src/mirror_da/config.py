"""Run configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .errors import InvalidArgumentError
from .mirror import DistanceKind, MirrorConfig
from .network import LrSchedule

MIRROR_LAYERS = ("none", "f", "g", "both")


@dataclass
class RunConfig:
    seed: int | None = None
    k: int = 3
    gamma: float = 1.0
    distance: str = "euclidean"
    weighting: str = "uniform"
    epochs: int = 200
    batch_size: int = 64
    eta0: float = 0.001
    alpha: float = 10.0
    beta: float = 0.75
    fc_lr_mult: float = 10.0
    momentum: float = 0.0
    weight_decay: float = 0.0
    mirror_layers: str = "both"
    mirror_pool: str = "batch"
    d_f: int = 16
    d_g: int = 8
    hidden: int = 32
    backbone_layers: int = 2
    init_scale: float = 0.1
    symmetric_kl: bool = False
    per_domain_anchors: bool = False
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6

    def validate(self) -> "RunConfig":
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.gamma < 0:
            raise InvalidArgumentError("gamma must be >= 0")
        if self.batch_size < 2:
            raise InvalidArgumentError("batch_size must be >= 2")
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        if self.mirror_layers not in MIRROR_LAYERS:
            raise InvalidArgumentError(f"mirror_layers must be one of {MIRROR_LAYERS}")
        if self.mirror_pool not in ("batch", "full"):
            raise InvalidArgumentError("mirror_pool must be 'batch' or 'full'")
        self.mirror_config()
        self.schedule()
        return self

    def distance_kind(self) -> DistanceKind:
        return DistanceKind.parse(self.distance)

    def mirror_config(self) -> MirrorConfig:
        return MirrorConfig(self.k, self.distance_kind(), self.weighting)

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.eta0, self.alpha, self.beta)

    def layers(self) -> tuple:
        return {"none": (), "f": ("f",), "g": ("g",), "both": ("f", "g")}[self.mirror_layers]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# Settings for the desk-scale experiments: the stock eta0 with plain SGD
# barely moves a freshly initialised small network in a few dozen epochs.
DESK_SETTINGS = dict(epochs=60, batch_size=64, eta0=0.01, momentum=0.9, init_scale=0.5)


def desk_run_config(**changes) -> RunConfig:
    return RunConfig(**{**DESK_SETTINGS, **changes}).validate()


@dataclass
class DataConfig:
    """How the CLI builds datasets when no CSV files are given."""

    dataset: str = "dilemma"
    n_source: int = 2000
    n_target: int = 2000
    bias: float = 1.0
    data_seed: int | None = None
    pattern_shift: float = 3.0
    # rescale both domains with the source mean/std before training
    standardize: bool = True
    extra: dict = field(default_factory=dict)


def _coerce(value: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if "bool" in typ:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidArgumentError(f"not a boolean: {value!r}")
    if "None" in typ and value.strip().lower() in ("none", ""):
        return None
    try:
        if "int" in typ:
            return int(value)
        if "float" in typ:
            return float(value)
    except ValueError as exc:
        raise InvalidArgumentError(str(exc)) from None
    return value.strip()


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_configs(raw: dict) -> tuple[RunConfig, DataConfig]:
    """Split raw string settings into typed run and data configs."""
    run_types = {f.name: f.type for f in fields(RunConfig)}
    data_types = {f.name: f.type for f in fields(DataConfig) if f.name != "extra"}
    run_kw, data_kw = {}, {}
    for key, value in raw.items():
        if value is None:
            continue
        if key in run_types:
            run_kw[key] = _coerce(str(value), run_types[key]) if isinstance(value, str) else value
        elif key in data_types:
            data_kw[key] = _coerce(str(value), data_types[key]) if isinstance(value, str) else value
        else:
            raise InvalidArgumentError(f"unknown config key {key!r}")
    return RunConfig(**run_kw).validate(), DataConfig(**data_kw)


def format_config(cfg) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items() if k != "extra")
