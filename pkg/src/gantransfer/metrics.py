"""Two-class confusion matrices and the metrics derived from them.

Convention: ``counts[p][a]`` counts samples predicted as class ``p`` whose
actual class is ``a`` -- rows are predictions, columns are ground truth.
Precision is therefore computed along rows and recall along columns.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import CLASS_NAMES
from .errors import EmptyMatrix, InvalidLabel, LengthMismatch

NOT_APPLICABLE = None  # marker for a ratio whose denominator is zero


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: Tuple[Tuple[int, int], Tuple[int, int]]

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.shape != (2, 2):
            raise ValueError(f"confusion matrix must be 2x2, got shape {arr.shape}")
        if np.any(arr < 0) or np.any(arr != np.round(arr)):
            raise ValueError("confusion matrix entries must be non-negative integers")
        object.__setattr__(self, "counts", tuple(tuple(int(v) for v in row) for row in arr))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())

    def row_sums(self) -> np.ndarray:
        return self.array.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.array.sum(axis=0)

    def transpose(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.array.T)


def confusion_from_predictions(predicted: Sequence[int], actual: Sequence[int]) -> ConfusionMatrix:
    p = np.asarray(predicted)
    a = np.asarray(actual)
    if p.shape != a.shape or p.ndim != 1:
        raise LengthMismatch(f"predicted {p.shape} and actual {a.shape} differ")
    if p.size == 0:
        raise LengthMismatch("no samples to tabulate")
    for name, arr in (("predicted", p), ("actual", a)):
        if not np.all(np.isin(arr, (0, 1))):
            raise InvalidLabel(f"{name} labels must be 0 or 1")
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (p.astype(np.int64), a.astype(np.int64)), 1)
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("accuracy of an empty confusion matrix")
    return float(np.trace(cm.array)) / cm.total


def _ratios(diag, sums) -> Tuple[Optional[float], ...]:
    return tuple(float(d) / s if s > 0 else NOT_APPLICABLE for d, s in zip(diag, sums))


def per_class_precision(cm: ConfusionMatrix):
    """diag / row sum, one value per predicted class (None when the row is empty)."""
    return _ratios(np.diag(cm.array), cm.row_sums())


def per_class_recall(cm: ConfusionMatrix):
    """diag / column sum, one value per actual class (None when the column is empty)."""
    return _ratios(np.diag(cm.array), cm.col_sums())


def _macro(values) -> float:
    # undefined per-class ratios count as 0, so a class that is never predicted is penalised
    return float(np.mean([0.0 if v is None else v for v in values]))


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: Tuple[Optional[float], Optional[float]]
    recall: Tuple[Optional[float], Optional[float]]
    macro_precision: float
    macro_recall: float
    f1: float
    total: int

    @property
    def paper_precision(self) -> float:
        """Published-table convention: the column-wise (recall) macro average."""
        return self.macro_recall

    @property
    def paper_recall(self) -> float:
        """Published-table convention: the row-wise (precision) macro average."""
        return self.macro_precision

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision_normal": self.precision[0],
            "precision_pneumonia": self.precision[1],
            "recall_normal": self.recall[0],
            "recall_pneumonia": self.recall[1],
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "f1": self.f1,
            "paper_precision": self.paper_precision,
            "paper_recall": self.paper_recall,
            "total": self.total,
        }


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise EmptyMatrix("metrics of an empty confusion matrix")
    prec = per_class_precision(cm)
    rec = per_class_recall(cm)
    mp, mr = _macro(prec), _macro(rec)
    return MetricsReport(accuracy(cm), prec, rec, mp, mr, f1_score(mp, mr), cm.total)


# -- rendering ------------------------------------------------------------------

def _pct(v: Optional[float], digits: int) -> str:
    return "n/a" if v is None else f"{100 * v:.{digits}f}%"


def format_report(report: MetricsReport, digits: int = 2) -> str:
    """Key-value text, one ``key=value`` per line, values as fractions."""
    lines = []
    for key, value in report.as_dict().items():
        if value is None:
            lines.append(f"{key}=n/a")
        elif isinstance(value, int):
            lines.append(f"{key}={value}")
        else:
            lines.append(f"{key}={value:.6f}")
    return "\n".join(lines) + "\n"


def render_confusion(cm: ConfusionMatrix, names: Sequence[str] = CLASS_NAMES) -> str:
    """Plain-text table: counts and share of total, precision margin per row,
    recall and miss-rate margins per column, overall accuracy in the corner."""
    arr, total = cm.array, cm.total
    prec, rec = per_class_precision(cm), per_class_recall(cm)
    acc = accuracy(cm) if total else None
    w = max(len(n) for n in names) + 2
    cell = 16
    out = [" " * (w + 8) + "".join(f"{n:>{cell}}" for n in names) + f"{'':>{cell}}"]
    for i, name in enumerate(names):
        cells = "".join(f"{f'{arr[i, j]} {_pct(arr[i, j] / total if total else None, 1)}':>{cell}}"
                        for j in range(2))
        out.append(f"{'output':<8}{name:<{w}}{cells}{_pct(prec[i], 1):>{cell}}")
    out.append(" " * (w + 8) + "".join(f"{_pct(r, 1):>{cell}}" for r in rec) + f"{_pct(acc, 1):>{cell}}")
    miss = [None if r is None else 1 - r for r in rec]
    out.append(" " * (w + 8) + "".join(f"{_pct(m, 1):>{cell}}" for m in miss)
               + f"{_pct(None if acc is None else 1 - acc, 1):>{cell}}")
    out.append(" " * (w + 8) + f"{'target class':^{2 * cell}}")
    return "\n".join(out) + "\n"
