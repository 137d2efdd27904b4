"""Accuracy and error breakdowns against (hidden) target labels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import ModelParams, forward


@dataclass
class EvalResult:
    accuracy: float
    per_class_error: dict
    class_counts: dict
    per_pattern_error: dict = field(default_factory=dict)
    pattern_counts: dict = field(default_factory=dict)
    predictions: np.ndarray | None = None

    def summary(self) -> dict:
        return dict(accuracy=self.accuracy,
                    per_class_error={str(k): v for k, v in self.per_class_error.items()},
                    per_pattern_error={str(k): v for k, v in self.per_pattern_error.items()})


def _breakdown(wrong, keys):
    errors, counts = {}, {}
    for key in np.unique(keys):
        sel = keys == key
        counts[key.item()] = int(sel.sum())
        errors[key.item()] = float(wrong[sel].mean())
    return errors, counts


def score(predictions, labels, patterns=None) -> EvalResult:
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    wrong = pred != y
    per_class, class_counts = _breakdown(wrong, y)
    per_pat, pat_counts = {}, {}
    if patterns is not None:
        # patterns are only meaningful within a class, so key on (class, pattern)
        pat = np.asarray(patterns)
        keys = np.array([f"{c}:{p}" for c, p in zip(y, pat)])
        per_pat, pat_counts = _breakdown(wrong, keys)
    return EvalResult(float(1.0 - wrong.mean()), per_class, class_counts, per_pat, pat_counts, pred)


def evaluate(params: ModelParams, dataset) -> EvalResult:
    """Argmax accuracy plus per-class and per-sub-pattern error rates."""
    pred = forward(params, dataset.features).probs.argmax(axis=1)
    return score(pred, dataset.reveal_labels(), getattr(dataset, "patterns", None))


class TargetMonitor:
    """Feeds target accuracy and pseudo-label agreement into epoch metrics.

    It owns the target labels; the training loop only hands it predictions.
    """

    def __init__(self, dataset):
        self._labels = np.asarray(dataset.reveal_labels())

    def update(self, row, state):
        row.target_acc = float((state.target_probs.argmax(axis=1) == self._labels).mean())
        row.pseudo_agree_f = float((state.pseudo["f"].labels == self._labels).mean())
        row.pseudo_agree_g = float((state.pseudo["g"].labels == self._labels).mean())
