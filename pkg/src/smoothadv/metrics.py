"""Confusion matrices, F1, attack success rate and perturbation smoothness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from smoothadv.data import N_CLASSES, Dataset, RhythmClass

# Classes averaged into the headline F1 (Noise is excluded).
F1_CLASSES = (RhythmClass.NORMAL, RhythmClass.AF, RhythmClass.OTHER)


def confusion_from_labels(y_true, y_pred) -> np.ndarray:
    """4x4 counts; rows are true classes, columns predicted classes."""
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def confusion(model, dataset: Dataset) -> np.ndarray:
    x, y = dataset.arrays(model.input_length)
    pred, _ = model.predict_batch(x)
    return confusion_from_labels(y, pred)


def accuracy(cm: np.ndarray) -> float:
    total = int(cm.sum())
    return float(np.trace(cm)) / total if total else float("nan")


@dataclass
class F1Scores:
    per_class: dict
    mean: float
    degenerate: list = field(default_factory=list)


def f1_scores(cm: np.ndarray) -> F1Scores:
    """Per-class F1 plus the mean over Normal/AF/Other.

    A class absent from both the truth and the predictions gets F1 = 0 and is
    listed in ``degenerate``.
    """
    cm = np.asarray(cm)
    per_class, degenerate = {}, []
    for c in RhythmClass:
        i = c.index
        tp = int(cm[i, i])
        predicted = int(cm[:, i].sum())
        actual = int(cm[i, :].sum())
        if predicted == 0 and actual == 0:
            per_class[c] = 0.0
            degenerate.append(c)
            continue
        # 2PR/(P+R) written in counts; identical when both are defined
        per_class[c] = 2.0 * tp / (predicted + actual)
    mean = float(np.mean([per_class[c] for c in F1_CLASSES]))
    return F1Scores(per_class, mean, degenerate)


@dataclass(frozen=True)
class SuccessRate:
    n_eligible: int
    n_success: int

    @property
    def rate(self) -> Optional[float]:
        """``None`` (reported as n/a) when nothing was eligible."""
        return self.n_success / self.n_eligible if self.n_eligible else None


def success_rate(results: Iterable) -> SuccessRate:
    n_eligible = n_success = 0
    for r in results:
        if r.eligible:
            n_eligible += 1
            n_success += bool(r.success)
    return SuccessRate(n_eligible, n_success)


def total_variation(x) -> float:
    return float(np.abs(np.diff(np.asarray(x, dtype=np.float64))).sum())


def max_abs_second_difference(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3:
        return 0.0
    return float(np.max(np.abs(x[2:] - 2.0 * x[1:-1] + x[:-2])))


_PERCENTILES = (5, 25, 50, 75, 95)


def smoothness_stats(results_or_perturbations: Sequence) -> dict:
    """Percentiles of max-abs second difference and total variation of perturbations."""
    perts = [getattr(r, "perturbation", r) for r in results_or_perturbations]
    if not perts:
        return {"n": 0, "max_second_diff": None, "total_variation": None}
    msd = np.array([max_abs_second_difference(p) for p in perts])
    tv = np.array([total_variation(p) for p in perts])

    def pct(v):
        return {f"p{q}": float(np.percentile(v, q)) for q in _PERCENTILES} | {"max": float(v.max())}

    return {"n": len(perts), "max_second_diff": pct(msd), "total_variation": pct(tv)}


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    f1: F1Scores
    attack_success_rate: Optional[float] = None
    smoothness: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "n": int(self.confusion.sum()),
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "classes": [c.value for c in RhythmClass],
            "f1": {c.value: v for c, v in self.f1.per_class.items()},
            "mean_f1_normal_af_other": self.f1.mean,
            "f1_degenerate": [c.value for c in self.f1.degenerate],
        }
        if self.attack_success_rate is not None:
            out["attack_success_rate"] = self.attack_success_rate
        if self.smoothness is not None:
            out["smoothness"] = self.smoothness
        return out

    def render(self) -> str:
        names = [c.value for c in RhythmClass]
        w = max(len(n) for n in names) + 2
        lines = ["true \\ pred".ljust(w + 4) + "".join(n.rjust(w) for n in names)]
        for c in RhythmClass:
            row = "".join(str(int(v)).rjust(w) for v in self.confusion[c.index])
            lines.append(c.value.ljust(w + 4) + row)
        lines.append("")
        lines.append(f"{'class':<{w}}{'F1':>8}")
        for c in RhythmClass:
            flag = "  (absent)" if c in self.f1.degenerate else ""
            lines.append(f"{c.value:<{w}}{self.f1.per_class[c]:>8.4f}{flag}")
        lines.append("")
        lines.append(f"accuracy {self.accuracy:.4f}   mean F1 (Normal/AF/Other) {self.f1.mean:.4f}")
        return "\n".join(lines)


def evaluate(model, dataset: Dataset) -> MetricsReport:
    cm = confusion(model, dataset)
    return MetricsReport(cm, accuracy(cm), f1_scores(cm))
