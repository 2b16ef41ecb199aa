"""Confusion matrix, precision/recall/F1 with averaging, one-vs-rest ROC and AUC."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]`` = samples of true class ``i`` predicted as ``j``."""

    counts: np.ndarray

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - np.diag(self.counts)

    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - np.diag(self.counts)

    def tn(self) -> np.ndarray:
        return self.total - self.tp() - self.fp() - self.fn()


def confusion_matrix(predicted, true, k: int) -> ConfusionMatrix:
    predicted = np.asarray(predicted, dtype=np.int64).reshape(-1)
    true = np.asarray(true, dtype=np.int64).reshape(-1)
    if predicted.shape != true.shape:
        raise ValueError(f"{predicted.size} predictions but {true.size} labels")
    for name, arr in (("predicted", predicted), ("true", true)):
        bad = arr[(arr < 0) | (arr >= k)]
        if bad.size:
            raise ValueError(f"{name} label {int(bad[0])} outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true, predicted), 1)
    return ConfusionMatrix(counts)


def accuracy(matrix: ConfusionMatrix) -> float:
    if matrix.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(matrix.counts)) / matrix.total


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    # names of metrics whose denominator was zero (reported as 0)
    undefined: tuple[str, ...] = ()


def _prf(tp: int, fp: int, fn: int) -> PRF:
    undefined = []
    if tp + fp:
        p = tp / (tp + fp)
    else:
        p = 0.0
        undefined.append("precision")
    if tp + fn:
        r = tp / (tp + fn)
    else:
        r = 0.0
        undefined.append("recall")
    if p + r:
        f = 2 * p * r / (p + r)
    else:
        f = 0.0
        undefined.append("f1")
    return PRF(p, r, f, tuple(undefined))


def precision_recall_f1(matrix: ConfusionMatrix, mode: int | str = "macro"):
    """Precision, recall and F1 for a class index or an averaging mode.

    ``mode`` is a class index, ``"per-class"`` (list of :class:`PRF`),
    ``"macro"`` (unweighted mean of per-class values; F1 is the mean of the
    per-class F1 scores) or ``"micro"`` (pooled counts). Zero denominators
    yield 0 and are listed in ``PRF.undefined``.
    """
    tp, fp, fn = matrix.tp(), matrix.fp(), matrix.fn()
    if isinstance(mode, (int, np.integer)) and not isinstance(mode, bool):
        if not 0 <= mode < matrix.k:
            raise ValueError(f"class index {mode} outside [0, {matrix.k})")
        return _prf(int(tp[mode]), int(fp[mode]), int(fn[mode]))
    if mode == "per-class":
        return [_prf(int(tp[c]), int(fp[c]), int(fn[c])) for c in range(matrix.k)]
    if mode == "micro":
        return _prf(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    if mode == "macro":
        per = [_prf(int(tp[c]), int(fp[c]), int(fn[c])) for c in range(matrix.k)]
        undefined = tuple(sorted({f"{u}[{c}]" for c, m in enumerate(per) for u in m.undefined}))
        return PRF(
            float(np.mean([m.precision for m in per])),
            float(np.mean([m.recall for m in per])),
            float(np.mean([m.f1 for m in per])),
            undefined,
        )
    raise ValueError(f"unknown averaging mode {mode!r}")


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_auc(scores, true, class_index: int) -> tuple[RocCurve, float]:
    """One-vs-rest ROC for ``class_index`` and its trapezoidal AUC.

    ``scores`` is a (n, k) probability array (or a 1-D score vector for the
    class). Equal scores form a single step, so the area equals
    P(score_pos > score_neg) + 0.5 * P(tie).
    """
    scores = np.asarray(scores, dtype=np.float64)
    s = scores[:, class_index] if scores.ndim == 2 else scores
    pos = np.asarray(true).reshape(-1) == class_index
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"class {class_index}: ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="stable")
    s_sorted, pos_sorted = s[order], pos[order]
    distinct = np.flatnonzero(np.diff(s_sorted)) if s_sorted.size > 1 else np.array([], int)
    ends = np.concatenate([distinct, [s_sorted.size - 1]])
    tp = np.cumsum(pos_sorted)[ends]
    fp = (ends + 1) - tp
    tp = np.concatenate([[0], tp]).astype(np.int64)
    fp = np.concatenate([[0], fp]).astype(np.int64)
    thresholds = np.concatenate([[np.inf], s_sorted[ends]])
    # exact integer trapezoid: sum dfp * (tp_prev + tp) / (2 P N)
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, thresholds), auc


# -- reports ------------------------------------------------------------------


@dataclass
class EvaluationReport:
    classes: tuple[str, ...]
    matrix: ConfusionMatrix
    per_class: list[PRF]
    macro: PRF
    micro: PRF
    accuracy: float
    roc: dict[str, RocCurve] = field(default_factory=dict)
    auc: dict[str, float] = field(default_factory=dict)

    @property
    def macro_auc(self) -> float:
        return float(np.mean(list(self.auc.values()))) if self.auc else math.nan

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.classes])
        for name, row in zip(self.classes, self.matrix.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1"])
        for name, m in zip(self.classes, self.per_class):
            w.writerow([name, repr(m.precision), repr(m.recall), repr(m.f1)])
        w.writerow(["macro", repr(self.macro.precision), repr(self.macro.recall), repr(self.macro.f1)])
        w.writerow(["micro", repr(self.micro.precision), repr(self.micro.recall), repr(self.micro.f1)])
        return buf.getvalue()

    def roc_csv(self, name: str) -> str:
        curve = self.roc[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])
        return buf.getvalue()

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {"confusion.csv": self.confusion_csv(), "metrics.csv": self.metrics_csv()}
        for name in self.roc:
            files[f"roc_{name}.csv"] = self.roc_csv(name)
        out = []
        for fname, text in files.items():
            path = directory / fname
            path.write_text(text, encoding="utf-8")
            out.append(path)
        return out

    def to_text(self) -> str:
        width = max(len(c) for c in (*self.classes, "macro", "micro"))
        lines = [f"accuracy: {self.accuracy:.4f}", f"macro-F1: {self.macro.f1:.4f}", ""]
        lines.append(f"{'class'.ljust(width)}  precision  recall     f1         auc")
        for name, m in zip(self.classes, self.per_class):
            auc = f"{self.auc[name]:.4f}" if name in self.auc else "n/a"
            flag = f"  (undefined: {', '.join(m.undefined)})" if m.undefined else ""
            lines.append(f"{name.ljust(width)}  {m.precision:9.4f}  {m.recall:9.4f}  {m.f1:9.4f}  {auc}{flag}")
        macro_auc = f"{self.macro_auc:.4f}" if self.auc else "n/a"
        lines.append(f"{'macro'.ljust(width)}  {self.macro.precision:9.4f}  {self.macro.recall:9.4f}  {self.macro.f1:9.4f}  {macro_auc}")
        lines.append(f"{'micro'.ljust(width)}  {self.micro.precision:9.4f}  {self.micro.recall:9.4f}  {self.micro.f1:9.4f}")
        lines.append("")
        lines.append("confusion matrix (rows = true, columns = predicted):")
        lines.extend(self.confusion_csv().splitlines())
        return "\n".join(lines) + "\n"


def evaluation_report(probabilities, true, classes) -> EvaluationReport:
    """Build every metric from (n, k) class probabilities and true labels."""
    probs = np.asarray(probabilities, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64)
    classes = tuple(classes)
    k = len(classes)
    if probs.ndim != 2 or probs.shape[1] != k:
        raise ValueError(f"probabilities must be (n, {k}), got {probs.shape}")
    if probs.shape[0] == 0:
        raise ValueError("cannot evaluate an empty set")
    cm = confusion_matrix(np.argmax(probs, axis=1), true, k)
    report = EvaluationReport(
        classes,
        cm,
        precision_recall_f1(cm, "per-class"),
        precision_recall_f1(cm, "macro"),
        precision_recall_f1(cm, "micro"),
        accuracy(cm),
    )
    for c, name in enumerate(classes):
        if 0 < np.sum(true == c) < true.size:
            report.roc[name], report.auc[name] = roc_auc(probs, true, c)
    return report
