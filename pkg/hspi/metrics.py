"""Classification metrics (scikit-learn) with closed-form random-guess baselines."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from hspi.errors import ShapeError


@dataclass(frozen=True)
class MetricsReport:
    class_names: List[str]
    support: np.ndarray              # samples per true class
    confusion: np.ndarray            # (C, C), rows = true class
    accuracy: float
    per_class_accuracy: np.ndarray   # recall
    per_class_f1: np.ndarray
    macro_f1: float
    random_accuracy: float           # 1 / C
    random_f1: np.ndarray            # uniform guessing, per class
    random_macro_f1: float

    @property
    def classes_above_random(self) -> int:
        return int((self.per_class_f1 > self.random_f1).sum())

    def table(self) -> str:
        width = max(8, *(len(n) for n in self.class_names)) + 2
        lines = [f"{'class':<{width}}{'n':>6}{'acc':>8}{'F1':>8}{'rand F1':>9}"]
        for i, name in enumerate(self.class_names):
            lines.append(f"{name:<{width}}{int(self.support[i]):>6}{self.per_class_accuracy[i]:>8.3f}"
                         f"{self.per_class_f1[i]:>8.3f}{self.random_f1[i]:>9.3f}")
        lines.append(f"{'overall':<{width}}{int(self.support.sum()):>6}{self.accuracy:>8.3f}"
                     f"{self.macro_f1:>8.3f}{self.random_macro_f1:>9.3f}")
        lines.append(f"random-guess accuracy {self.random_accuracy:.3f}")
        return "\n".join(lines)

    def rows(self) -> List[dict]:
        out = [{"class": n, "support": int(self.support[i]), "accuracy": f"{self.per_class_accuracy[i]:.6f}",
                "f1": f"{self.per_class_f1[i]:.6f}", "random_f1": f"{self.random_f1[i]:.6f}"}
               for i, n in enumerate(self.class_names)]
        out.append({"class": "overall", "support": int(self.support.sum()), "accuracy": f"{self.accuracy:.6f}",
                    "f1": f"{self.macro_f1:.6f}", "random_f1": f"{self.random_macro_f1:.6f}"})
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["class", "support", "accuracy", "f1", "random_f1"])
            writer.writeheader()
            writer.writerows(self.rows())


def random_guess_f1(support: np.ndarray) -> np.ndarray:
    """Expected F1 per class of a predictor guessing uniformly over C classes.

    Precision equals the class prior π_c, recall equals 1/C.
    """
    c = len(support)
    prior = support / max(1, support.sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = 2 * prior * (1 / c) / (prior + 1 / c)
    return np.nan_to_num(f1)


def report_metrics(predictions: Sequence[int], labels: Sequence[int], class_names: Sequence[str] | None = None,
                   num_classes: int | None = None) -> MetricsReport:
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size == 0:
        raise ShapeError("length-mismatch", f"predictions {pred.shape} vs labels {true.shape}")
    c = num_classes or (len(class_names) if class_names else int(max(pred.max(), true.max())) + 1)
    names = list(class_names) if class_names else [str(i) for i in range(c)]

    classes = list(range(c))
    _, recall, f1, support = precision_recall_fscore_support(true, pred, labels=classes, zero_division=0)
    rand_f1 = random_guess_f1(support)
    return MetricsReport(
        class_names=names,
        support=support,
        confusion=confusion_matrix(true, pred, labels=classes),
        accuracy=float(accuracy_score(true, pred)),
        per_class_accuracy=recall,
        per_class_f1=f1,
        macro_f1=float(f1.mean()),
        random_accuracy=1.0 / c,
        random_f1=rand_f1,
        random_macro_f1=float(rand_f1.mean()),
    )
