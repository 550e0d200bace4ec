"""Confusion counts and the five scores used as the search objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "balanced_accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ScoreReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    balanced_accuracy: float
    degenerate: tuple = field(default=())

    def __getitem__(self, name):
        if name not in METRIC_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self):
        out = {name: getattr(self, name) for name in METRIC_NAMES}
        out["degenerate"] = list(self.degenerate)
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            **{name: float(data[name]) for name in METRIC_NAMES},
            degenerate=tuple(data.get("degenerate", ())),
        )


def confusion(predictions, labels):
    predictions = np.asarray(predictions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"predictions and labels differ in length: {predictions.shape} vs {labels.shape}"
        )
    n = labels.size
    tp = int(np.count_nonzero(predictions & labels))
    pos_pred = int(np.count_nonzero(predictions))
    pos = int(np.count_nonzero(labels))
    fp = pos_pred - tp
    fn = pos - tp
    return ConfusionMatrix(tp=tp, fp=fp, tn=n - tp - fp - fn, fn=fn)


def score_report(cm):
    """All five scores; a 0/0 ratio scores 0 and is named in ``degenerate``."""
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    accuracy = ratio(cm.tp + cm.tn, cm.total, "accuracy")
    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1")
    specificity = ratio(cm.tn, cm.tn + cm.fp, "specificity")
    balanced = (recall + specificity) / 2
    if "recall" in degenerate or "specificity" in degenerate:
        degenerate.append("balanced_accuracy")
    return ScoreReport(accuracy, precision, recall, f1, balanced, tuple(degenerate))


def score(predictions, labels, metric="balanced_accuracy"):
    return score_report(confusion(predictions, labels))[metric]
