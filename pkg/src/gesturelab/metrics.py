"""Confusion matrix, classification report, one-vs-rest sensitivity and
specificity.

Every ratio with a zero denominator is reported as 0.0, which is what a
class that is never predicted (or never present) shows in the report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Hashable, NamedTuple, Sequence

import numpy as np


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple
    counts: np.ndarray  # rows: true class, columns: predicted class

    def __post_init__(self):
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_class_counts(self, k: int) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) for class ``k`` against the rest."""
        tp = int(self.counts[k, k])
        fp = int(self.counts[:, k].sum()) - tp
        fn = int(self.counts[k, :].sum()) - tp
        return tp, fp, fn, self.total - tp - fp - fn

    def render(self) -> str:
        names = [str(c) for c in self.classes]
        width = max([len(n) for n in names] + [len(str(self.total)), 6])
        lines = ["true \\ predicted".ljust(width) + "  " + "  ".join(n.rjust(width) for n in names)]
        for name, row in zip(names, self.counts):
            lines.append(name.ljust(width) + "  " + "  ".join(str(int(v)).rjust(width) for v in row))
        return "\n".join(lines) + "\n"

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true/predicted", *self.classes])
            for name, row in zip(self.classes, self.counts):
                writer.writerow([name, *(int(v) for v in row)])
        return path


def confusion_matrix(y_true: Sequence[Hashable], y_pred: Sequence[Hashable], classes: Sequence[Hashable]) -> ConfusionMatrix:
    if len(y_true) != len(y_pred):
        raise ValueError(f"y_true has {len(y_true)} labels but y_pred has {len(y_pred)}")
    index = {c: i for i, c in enumerate(classes)}
    if len(index) != len(classes):
        raise ValueError("duplicate entries in classes")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        try:
            counts[index[t], index[p]] += 1
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} is not one of {list(classes)}") from None
    return ConfusionMatrix(tuple(classes), counts)


class Averages(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ClassMetrics:
    class_name: str
    precision: float
    recall: float
    f1: float
    support: int
    sensitivity: float = 0.0
    specificity: float = 0.0


@dataclass(frozen=True)
class ClassificationReport:
    per_class: tuple[ClassMetrics, ...]
    micro: Averages
    macro: Averages
    weighted: Averages
    overall_accuracy: float

    @property
    def support(self) -> int:
        return sum(m.support for m in self.per_class)

    def to_dict(self) -> dict:
        return {
            "per_class": [asdict(m) for m in self.per_class],
            "micro": self.micro._asdict(),
            "macro": self.macro._asdict(),
            "weighted": self.weighted._asdict(),
            "overall_accuracy": self.overall_accuracy,
            "support": self.support,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def render(self, digits: int = 2) -> str:
        """Plain-text table: one row per class, then micro/macro/weighted rows."""
        names = [str(m.class_name) for m in self.per_class] + ["Weighted average"]
        width = max(len(n) for n in names)
        head = f"{'Class Label':<{width}}  {'Precision':>9}  {'Recall':>9}  {'F1-score':>9}  {'Support':>9}"
        fmt = f"{{:<{width}}}  {{:>9.{digits}f}}  {{:>9.{digits}f}}  {{:>9.{digits}f}}  {{:>9d}}"
        lines = [head, ""]
        for m in self.per_class:
            lines.append(fmt.format(str(m.class_name), m.precision, m.recall, m.f1, m.support))
        lines.append("")
        for label, avg in (("Micro average", self.micro), ("Macro average", self.macro),
                           ("Weighted average", self.weighted)):
            lines.append(fmt.format(label, *avg, self.support))
        lines += ["", f"{'Class Label':<{width}}  {'Sensitivity':>11}  {'Specificity':>11}"]
        for m in self.per_class:
            lines.append(f"{str(m.class_name):<{width}}  {m.sensitivity:>11.{digits}f}  {m.specificity:>11.{digits}f}")
        lines += ["", f"Accuracy: {self.overall_accuracy:.{digits + 2}f}"]
        return "\n".join(lines) + "\n"


def aggregate(per_class: Sequence[ClassMetrics]) -> tuple[Averages, Averages]:
    """Macro (unweighted) and support-weighted means of the per-class rows."""
    p = np.array([m.precision for m in per_class], dtype=np.float64)
    r = np.array([m.recall for m in per_class], dtype=np.float64)
    f = np.array([m.f1 for m in per_class], dtype=np.float64)
    s = np.array([m.support for m in per_class], dtype=np.float64)
    if len(per_class) == 0:
        return Averages(0.0, 0.0, 0.0), Averages(0.0, 0.0, 0.0)
    macro = Averages(float(p.mean()), float(r.mean()), float(f.mean()))
    total = s.sum()
    if total == 0:
        return macro, Averages(0.0, 0.0, 0.0)
    weighted = Averages(float(p @ s / total), float(r @ s / total), float(f @ s / total))
    return macro, weighted


def sensitivity_specificity(matrix: ConfusionMatrix) -> tuple[list[tuple[float, float]], float]:
    rates = []
    for k in range(len(matrix.classes)):
        tp, fp, fn, tn = matrix.per_class_counts(k)
        rates.append((_ratio(tp, tp + fn), _ratio(tn, tn + fp)))
    return rates, _ratio(np.trace(matrix.counts), matrix.total)


def classification_report(matrix: ConfusionMatrix) -> ClassificationReport:
    rates, accuracy = sensitivity_specificity(matrix)
    per_class = []
    for k, name in enumerate(matrix.classes):
        tp, fp, fn, _ = matrix.per_class_counts(k)
        precision, recall = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        per_class.append(ClassMetrics(
            class_name=name,
            precision=precision,
            recall=recall,
            f1=f1_score(precision, recall),
            support=tp + fn,
            sensitivity=rates[k][0],
            specificity=rates[k][1],
        ))
    # pooled counts: every error is one FP and one FN, so all three equal accuracy
    tp = int(np.trace(matrix.counts))
    errors = matrix.total - tp
    micro = Averages(_ratio(tp, tp + errors), _ratio(tp, tp + errors), _ratio(2 * tp, 2 * tp + 2 * errors))
    macro, weighted = aggregate(per_class)
    return ClassificationReport(tuple(per_class), micro, macro, weighted, accuracy)


def evaluate_labels(y_true: Sequence[Hashable], y_pred: Sequence[Hashable], classes: Sequence[Hashable]):
    """Confusion matrix and report in one call."""
    matrix = confusion_matrix(y_true, y_pred, classes)
    return matrix, classification_report(matrix)
