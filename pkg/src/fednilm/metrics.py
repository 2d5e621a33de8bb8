"""Confusion-count bookkeeping and micro-averaged F1.

Runners report only TP/FP/FN/TN tallies; summing tallies before taking F1
(micro-averaging) is exactly equivalent to pooling all predictions first.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}

    @staticmethod
    def from_dict(doc: dict) -> "ConfusionCounts":
        return ConfusionCounts(doc["tp"], doc["fp"], doc["fn"], doc.get("tn", 0))


def classify(predictions, cutoff: float = 0.5) -> np.ndarray:
    """Threshold raw scores into {0, 1}; the boundary value counts as on."""
    p = np.asarray(predictions, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("predictions contain non-finite values")
    return (p >= cutoff).astype(np.int64)


def count(predicted, actual) -> ConfusionCounts:
    p = np.asarray(predicted, dtype=np.int64)
    a = np.asarray(actual, dtype=np.int64)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (a == 1))),
        fp=int(np.sum((p == 1) & (a == 0))),
        fn=int(np.sum((p == 0) & (a == 1))),
        tn=int(np.sum((p == 0) & (a == 0))),
    )


def f1(counts: ConfusionCounts) -> float:
    """2TP / (2TP + FN + FP); 0.0 by convention when the denominator is zero."""
    denom = 2 * counts.tp + counts.fn + counts.fp
    if denom == 0:
        return 0.0
    return 2.0 * counts.tp / denom


def merge(counts_list) -> ConfusionCounts:
    counts_list = list(counts_list)
    if not counts_list:
        raise ValueError("cannot merge an empty list of counts")
    return ConfusionCounts(
        tp=sum(c.tp for c in counts_list),
        fp=sum(c.fp for c in counts_list),
        fn=sum(c.fn for c in counts_list),
        tn=sum(c.tn for c in counts_list),
    )


def improvement_pct(candidate_f1: float, baseline_f1: float) -> float:
    """Relative F1 improvement of candidate over baseline, in percent."""
    if baseline_f1 <= 0:
        raise ValueError("baseline F1 must be > 0")
    return 100.0 * (candidate_f1 - baseline_f1) / baseline_f1
