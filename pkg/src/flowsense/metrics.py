"""Confusion matrix, ACC/FPR/DR and benchmark reports (anomalous = positive)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np


class UndefinedMetric(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


def confusion(predictions, labels) -> ConfusionMatrix:
    p = np.asarray(predictions).astype(np.int64)
    y = np.asarray(labels).astype(np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {y.shape} labels")
    if len(y) == 0:
        raise ValueError("no samples to evaluate")
    if not (np.isin(p, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise ValueError("predictions and labels must be binary")
    return ConfusionMatrix(
        tp=int(((p == 1) & (y == 1)).sum()),
        fn=int(((p == 0) & (y == 1)).sum()),
        fp=int(((p == 1) & (y == 0)).sum()),
        tn=int(((p == 0) & (y == 0)).sum()),
    )


class Metrics(NamedTuple):
    acc: float
    fpr: float
    dr: float


def _exact(cm: ConfusionMatrix) -> tuple[Fraction, Fraction, Fraction]:
    if cm.tp + cm.fn < 1:
        raise UndefinedMetric("no anomalous samples: detection rate is undefined")
    if cm.fp + cm.tn < 1:
        raise UndefinedMetric("no normal samples: false positive rate is undefined")
    acc = Fraction(100 * (cm.tp + cm.tn), cm.total)
    fpr = Fraction(100 * cm.fp, cm.fp + cm.tn)
    dr = Fraction(100 * cm.tp, cm.tp + cm.fn)
    return acc, fpr, dr


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Percentages: acc = (tp+tn)/total, fpr = fp/(fp+tn), dr = tp/(tp+fn)."""
    return Metrics(*(float(v) for v in _exact(cm)))


def rounded_metrics(cm: ConfusionMatrix, digits: int = 1) -> Metrics:
    """Percentages rounded half-to-even on the exact rational values."""
    return Metrics(*(float(round(v, digits)) for v in _exact(cm)))


def within_convex_bounds(acc: float, fpr: float, dr: float, slack: float = 0.0) -> bool:
    """acc is a weighted mean of dr and 100 - fpr, so it must lie between them.

    ``slack`` widens the interval, e.g. 0.1 for figures rounded to 1 decimal.
    """
    tnr = 100.0 - fpr
    return min(dr, tnr) - slack - 1e-9 <= acc <= max(dr, tnr) + slack + 1e-9


@dataclass(frozen=True)
class ReportRow:
    arch: str
    acc: float
    fpr: float
    dr: float
    cm: ConfusionMatrix


@dataclass(frozen=True)
class Report:
    rows: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("arch", "acc_pct", "fpr_pct", "dr_pct"))
        for r in self.rows:
            w.writerow((r.arch, f"{r.acc:.1f}", f"{r.fpr:.1f}", f"{r.dr:.1f}"))
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len("model")] + [len(r.arch) for r in self.rows])
        lines = [f"{'model':<{width}}  {'ACC%':>6}  {'FPR%':>6}  {'DR%':>6}"]
        for r in self.rows:
            lines.append(f"{r.arch.upper():<{width}}  {r.acc:>6.1f}  {r.fpr:>6.1f}  {r.dr:>6.1f}")
        return "\n".join(lines) + "\n"


def report_row(name: str, predictions, labels) -> ReportRow:
    cm = confusion(predictions, labels)
    m = rounded_metrics(cm)
    exact = metrics(cm)
    assert within_convex_bounds(*exact), f"inconsistent metrics {exact} for {cm}"
    return ReportRow(name, m.acc, m.fpr, m.dr, cm)


def benchmark_report(models: Sequence, test_set) -> Report:
    """One row per model, in the given order."""
    from .detector import predict_dataset

    rows = []
    for model in models:
        pred, _ = predict_dataset(model, test_set)
        rows.append(report_row(model.arch, pred, test_set.y))
    return Report(tuple(rows))
