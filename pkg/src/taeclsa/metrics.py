"""Confusion matrices, per-class classification metrics and size reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import ClassLabel
from .errors import DataError

N_CLASSES = len(ClassLabel)
CLASS_NAMES = [c.name for c in ClassLabel]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn


def confusion(pred_labels: Sequence[int], true_labels: Sequence[int], n_classes: int = N_CLASSES) -> ConfusionMatrix:
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise DataError(f"label lists differ in length: {pred.size} predicted vs {true.size} true")
    for name, a in (("predicted", pred), ("true", true)):
        if a.size and (a.min() < 0 or a.max() >= n_classes):
            raise DataError(f"{name} labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts)


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ok = den > 0
    out = np.zeros(num.shape, dtype=np.float64)
    out[ok] = num[ok] / den[ok]
    return out, ~ok


@dataclass
class ClassMetrics:
    sensitivity: float
    precision: float
    f1: float
    accuracy: float
    support: int
    degenerate: list = field(default_factory=list)


@dataclass
class MetricReport:
    per_class: dict
    accuracy: float
    macro_f1: float
    params: Optional[dict] = None
    confusion: Optional[list] = None

    def to_dict(self) -> dict:
        per = {}
        for name, m in self.per_class.items():
            per[name] = {"sensitivity": m.sensitivity, "precision": m.precision, "f1": m.f1,
                         "accuracy": m.accuracy, "support": m.support, "degenerate": list(m.degenerate)}
        return {"per_class": per, "accuracy": self.accuracy, "macro_f1": self.macro_f1, "params": self.params}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        """Aligned text table: class, Sensitivity, Precision, F1."""
        head = f"{'Class':<6} {'Sensitivity':>11} {'Precision':>9} {'F1':>6}"
        rows = [head, "-" * len(head)]
        for name in CLASS_NAMES:
            m = self.per_class[name]
            flag = " *" if m.degenerate else ""
            rows.append(f"{name:<6} {m.sensitivity:>11.2f} {m.precision:>9.2f} {m.f1:>6.2f}{flag}")
        rows.append("-" * len(head))
        rows.append(f"{'Accuracy':<18} {self.accuracy:.4f}")
        rows.append(f"{'Macro F1':<18} {self.macro_f1:.4f}")
        if any(m.degenerate for m in self.per_class.values()):
            rows.append("* zero denominator, reported as 0")
        return "\n".join(rows) + "\n"


def compute_metrics(cm: ConfusionMatrix, params: Optional[dict] = None) -> MetricReport:
    """Per-class sensitivity, precision and F1 plus global accuracy."""
    if cm.total == 0:
        raise DataError("confusion matrix is empty")
    tp, fp, fn, tn = cm.tp, cm.fp, cm.fn, cm.tn
    sens, sens_bad = _ratio(tp, tp + fn)
    prec, prec_bad = _ratio(tp, tp + fp)
    f1, f1_bad = _ratio(2 * tp, 2 * tp + fp + fn)
    per = {}
    for k, name in enumerate(CLASS_NAMES[: len(tp)]):
        flags = [n for n, bad in (("sensitivity", sens_bad[k]), ("precision", prec_bad[k]), ("f1", f1_bad[k])) if bad]
        per[name] = ClassMetrics(float(sens[k]), float(prec[k]), float(f1[k]),
                                 float((tp[k] + tn[k]) / cm.total), int(tp[k] + fn[k]), flags)
    acc = float(np.trace(cm.counts) / cm.total)
    return MetricReport(per, acc, float(np.mean(f1)), params, cm.counts.tolist())


# ---------------------------------------------------------------- size reports

@dataclass
class SizeReport:
    layers_a: dict
    layers_b: dict
    total_a: int
    total_b: int
    reduction_pct: float
    layer_reduction_pct: dict

    def to_dict(self) -> dict:
        return {
            "layers_a": self.layers_a, "layers_b": self.layers_b,
            "total_a": self.total_a, "total_b": self.total_b,
            "reduction_pct": self.reduction_pct, "layer_reduction_pct": self.layer_reduction_pct,
        }

    def table(self) -> str:
        names = list(dict.fromkeys([*self.layers_b, *self.layers_a]))
        w = max(len(n) for n in names + ["total"])
        rows = [f"{'layer':<{w}} {'A':>10} {'B':>10} {'reduction %':>12}"]
        for n in names:
            a, b = self.layers_a.get(n, 0), self.layers_b.get(n, 0)
            r = self.layer_reduction_pct.get(n)
            rows.append(f"{n:<{w}} {a:>10d} {b:>10d} {'' if r is None else f'{r:.2f}':>12}")
        rows.append(f"{'total':<{w}} {self.total_a:>10d} {self.total_b:>10d} {self.reduction_pct:>12.2f}")
        return "\n".join(rows) + "\n"


def _counts(model) -> dict:
    if isinstance(model, dict):
        return {k: int(v) for k, v in model.items()}
    return {k: int(v) for k, v in model.param_counts().items()}


def reduction_pct(a: int, b: int) -> float:
    return (1.0 - a / b) * 100.0


def param_report(model_a, model_b) -> SizeReport:
    """Compare model A against baseline B; accepts models or per-layer count dicts."""
    la, lb = _counts(model_a), _counts(model_b)
    per = {n: reduction_pct(la.get(n, 0), lb[n]) for n in lb if lb[n] > 0}
    ta, tb = sum(la.values()), sum(lb.values())
    return SizeReport(la, lb, ta, tb, reduction_pct(ta, tb), per)
