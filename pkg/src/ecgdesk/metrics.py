"""Evaluation statistics: confusion matrices, per-class and averaged metrics,
Wilson score intervals, bootstrap F1 intervals, and ROC AUC.

Zero-denominator (degenerate) metrics report 0 with a flag and are excluded
from macro averages.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class CiInterval:
    lo: float
    hi: float
    level: float = 0.95
    method: str = "wilson"

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi <= 1.0):
            raise ValueError("require 0 <= lo <= hi <= 1")


@dataclass(frozen=True)
class ClassMetrics:
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    accuracy: float
    degenerate: frozenset[str] = frozenset()
    cis: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "f1": self.f1,
            "accuracy": self.accuracy,
        }
        if self.degenerate:
            d["degenerate"] = sorted(self.degenerate)
        if self.cis:
            d["ci"] = {
                k: {"lo": ci.lo, "hi": ci.hi, "level": ci.level, "method": ci.method}
                for k, ci in self.cis.items()
            }
        return d


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # rows = truth, cols = prediction

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        n = len(self.classes)
        if arr.shape != (n, n):
            raise ValueError("counts must be n x n")
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_index(self, cls: str) -> int:
        try:
            return self.classes.index(cls)
        except ValueError:
            raise KeyError(f"unknown class: {cls}") from None

    def ovr_counts(self, cls: str) -> tuple[int, int, int, int]:
        """One-vs-rest (tp, fp, fn, tn)."""
        i = self.class_index(cls)
        tp = int(self.counts[i, i])
        fp = int(self.counts[:, i].sum() - tp)
        fn = int(self.counts[i, :].sum() - tp)
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn


def confusion_matrix(truth, pred, classes) -> ConfusionMatrix:
    """counts[i][j] = number of items with truth class i predicted as class j."""
    classes = tuple(classes)
    truth = list(truth)
    pred = list(pred)
    if len(truth) != len(pred):
        raise ValueError("truth and pred must have equal length")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in index:
            raise ValueError(f"unknown label: {t}")
        if p not in index:
            raise ValueError(f"unknown label: {p}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes=classes, counts=counts)


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def per_class_metrics(cm: ConfusionMatrix, cls: str) -> ClassMetrics:
    """One-vs-rest sensitivity/specificity/precision/F1/accuracy for one class."""
    tp, fp, fn, tn = cm.ovr_counts(cls)
    degenerate = set()
    sens, d = _safe_div(tp, tp + fn)
    if d:
        degenerate.add("sensitivity")
    spec, d = _safe_div(tn, tn + fp)
    if d:
        degenerate.add("specificity")
    prec, d = _safe_div(tp, tp + fp)
    if d:
        degenerate.add("precision")
    acc, d = _safe_div(tp + tn, cm.total)
    if d:
        degenerate.add("accuracy")
    f1, d = _safe_div(2 * prec * sens, prec + sens)
    if d:
        degenerate.add("f1")
    return ClassMetrics(
        sensitivity=sens,
        specificity=spec,
        precision=prec,
        f1=f1,
        accuracy=acc,
        degenerate=frozenset(degenerate),
    )


def average_metrics(cm: ConfusionMatrix, mode: str = "macro") -> ClassMetrics:
    """Macro (unweighted mean, degenerate classes excluded) or micro (pooled counts)."""
    if mode == "macro":
        fields = ("sensitivity", "specificity", "precision", "f1", "accuracy")
        sums = {f: 0.0 for f in fields}
        counts = {f: 0 for f in fields}
        for cls in cm.classes:
            m = per_class_metrics(cm, cls)
            for f in fields:
                if f not in m.degenerate:
                    sums[f] += getattr(m, f)
                    counts[f] += 1
        vals = {}
        degenerate = set()
        for f in fields:
            if counts[f] == 0:
                vals[f] = 0.0
                degenerate.add(f)
            else:
                vals[f] = sums[f] / counts[f]
        return ClassMetrics(degenerate=frozenset(degenerate), **vals)
    if mode == "micro":
        tp = fp = fn = tn = 0
        for cls in cm.classes:
            a, b, c, d = cm.ovr_counts(cls)
            tp += a
            fp += b
            fn += c
            tn += d
        sens, d1 = _safe_div(tp, tp + fn)
        spec, _ = _safe_div(tn, tn + fp)
        prec, d2 = _safe_div(tp, tp + fp)
        f1, _ = _safe_div(2 * prec * sens, prec + sens)
        acc, d3 = _safe_div(np.trace(cm.counts), cm.total)
        degenerate = set()
        if d1 or d2 or d3:
            degenerate.update({"sensitivity", "precision", "accuracy"})
        return ClassMetrics(
            sensitivity=sens,
            specificity=spec,
            precision=prec,
            f1=f1,
            accuracy=acc,
            degenerate=frozenset(degenerate),
        )
    raise ValueError("mode must be 'macro' or 'micro'")


def wilson_ci(k: int, n: int, level: float = 0.95) -> CiInterval:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= k <= n:
        raise ValueError("require 0 <= k <= n")
    z = norm.ppf(0.5 + level / 2.0)
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    margin = (z / denom) * np.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    return CiInterval(
        lo=max(0.0, float(center - margin)),
        hi=min(1.0, float(center + margin)),
        level=level,
        method="wilson",
    )


def f1_score(truth, pred, cls) -> float:
    """One-vs-rest F1 of a single class (0 when undefined)."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    tp = int(np.sum((truth == cls) & (pred == cls)))
    fp = int(np.sum((truth != cls) & (pred == cls)))
    fn = int(np.sum((truth == cls) & (pred != cls)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def bootstrap_f1_ci(
    truth, pred, cls, n_boot: int = 1000, seed: int = 0, level: float = 0.95
) -> CiInterval:
    """Percentile bootstrap interval for one class's F1, paired resampling."""
    if n_boot < 100:
        raise ValueError("n_boot must be >= 100")
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.size == 0 or truth.shape != pred.shape:
        raise ValueError("inputs must be non-empty and of equal length")
    rng = np.random.default_rng(seed)
    n = truth.size
    stats = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, n, size=n)
        stats[i] = f1_score(truth[idx], pred[idx], cls)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return CiInterval(lo=float(lo), hi=float(hi), level=level, method="bootstrap")


def roc_auc(scores, truth) -> float:
    """Probability a positive outscores a negative, ties counted 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(int)
    if set(np.unique(truth)) - {0, 1}:
        raise ValueError("truth must be binary 0/1")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    # midranks handle ties exactly like pair counting with half credit
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(truth.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < truth.size:
        j = i
        while j + 1 < truth.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[truth == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
