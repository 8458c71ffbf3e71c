"""Accuracy and macro-averaged precision / recall / F1."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import DimensionError, EmptyInputError


@dataclass
class ConfusionCounts:
    classes: list[int]
    tp: list[int]
    fp: list[int]
    fn: list[int]
    tn: list[int]

    @property
    def total(self) -> int:
        return self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0]


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def confusion(predictions, truth, classes=None) -> ConfusionCounts:
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise DimensionError(f"{pred.size} predictions vs {true.size} labels")
    if true.size == 0:
        raise EmptyInputError("cannot score an empty label list")
    if classes is None:
        classes = sorted(set(true.tolist()))
    tp, fp, fn, tn = [], [], [], []
    for c in classes:
        tp.append(int(np.sum((pred == c) & (true == c))))
        fp.append(int(np.sum((pred == c) & (true != c))))
        fn.append(int(np.sum((pred != c) & (true == c))))
        tn.append(int(np.sum((pred != c) & (true != c))))
    return ConfusionCounts(list(classes), tp, fp, fn, tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def score(predictions, truth) -> MetricsReport:
    """Macro metrics averaged over the classes present in ``truth``.

    Zero denominators contribute 0 (precision of a never-predicted class,
    F1 when precision and recall are both 0).
    """
    cc = confusion(predictions, truth)
    precisions, recalls, f1s = [], [], []
    for tp, fp, fn in zip(cc.tp, cc.fp, cc.fn):
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        precisions.append(p)
        recalls.append(r)
        f1s.append(_ratio(2 * p * r, p + r))
    accuracy = float(np.mean(np.asarray(predictions) == np.asarray(truth)))
    return MetricsReport(accuracy, float(np.mean(precisions)), float(np.mean(recalls)), float(np.mean(f1s)))


TABLE_COLUMNS = ("Embedding Method", "Classifier", "Accuracy", "Macro Precision", "Macro Recall", "Macro F1")


def _four_places(value: float) -> str:
    # half-up on the shortest decimal repr, so 0.53125 prints as 0.5313
    return str(Decimal(repr(float(value))).quantize(Decimal("0.0001"), ROUND_HALF_UP))


def format_table(rows) -> str:
    """Aligned text table. ``rows`` are (strategy, classifier, MetricsReport)."""
    body = [(s, c, *map(_four_places, (m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1)))
            for s, c, m in rows]
    widths = [max(len(str(r[i])) for r in [TABLE_COLUMNS, *body]) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(TABLE_COLUMNS, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"
