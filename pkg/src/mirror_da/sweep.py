"""Grid sweeps over one hyperparameter axis and several seeds."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .evaluation import TargetMonitor, evaluate

logger = logging.getLogger(__name__)

AXES = {
    "k": ("k", [1, 3, 5, 7, 9]),
    "gamma": ("gamma", [0.0, 1.0, 2.0, 3.0]),
    # rows of the layer ablation; "none" is the baseline without mirror loss
    "layers": ("mirror_layers", ["none", "g", "f", "both"]),
}

ABLATION_NAMES = {"none": "Baseline", "g": "FC Mirror", "f": "Bk Mirror", "both": "FC+Bk Mirror"}


@dataclass
class SweepRow:
    axis: str
    value: object
    seed: int
    accuracy: float
    status: str = "ok"
    error: str = ""
    # last epoch's metrics (EpochMetrics fields), empty for failed cells
    final: dict = field(default_factory=dict)


def _run_cell(args):
    from .training import train

    config, source, target = args
    try:
        params, metrics = train(config, source, target.unlabeled())
        final = metrics[-1].as_dict() if metrics else {}
        return evaluate(params, target).accuracy, "ok", "", final
    except Exception as exc:  # failed cells are recorded, the sweep goes on
        logger.warning("sweep cell failed: %s", exc)
        return float("nan"), "failed", f"{type(exc).__name__}: {exc}", {}


def sweep(base: RunConfig, axis: str, seeds, data, values=None, n_jobs: int = 1) -> list[SweepRow]:
    """Train and evaluate every (value, seed) cell.

    ``data`` is either a ``(source, target)`` pair shared by all cells or a
    callable ``seed -> (source, target)``.
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    field_name, default_values = AXES[axis]
    values = list(default_values if values is None else values)
    jobs, keys = [], []
    for value in values:
        for seed in seeds:
            source, target = data(seed) if callable(data) else data
            cfg = base.replace(**{field_name: value, "seed": seed}).validate()
            jobs.append((cfg, source, target))
            keys.append((value, seed))
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    return [SweepRow(axis, v, s, *r) for (v, s), r in zip(keys, results)]


def summarize(rows: list[SweepRow]) -> list[dict]:
    """Mean and std of accuracy per axis value (failed cells excluded)."""
    out = []
    for value in dict.fromkeys(r.value for r in rows):
        accs = np.array([r.accuracy for r in rows if r.value == value and r.status == "ok"])
        out.append(dict(value=value, n=int(accs.size),
                        mean=float(accs.mean()) if accs.size else float("nan"),
                        std=float(accs.std()) if accs.size else float("nan")))
    return out
