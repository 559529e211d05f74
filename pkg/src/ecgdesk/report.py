"""Evaluation reports: metric tables (JSON/CSV/plain text) and figures.

Tables follow the per-class layout "metric rows x class columns" with
"% (95% CI)" cells: Wilson intervals for proportion metrics, bootstrap for
F1. Figures render through the Agg backend so report generation works
headless.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ecgdesk.metrics import (
    ConfusionMatrix,
    average_metrics,
    bootstrap_f1_ci,
    confusion_matrix,
    per_class_metrics,
    wilson_ci,
)

_METRIC_ROWS = ("sensitivity", "specificity", "precision", "f1", "accuracy")


def _proportion_counts(cm: ConfusionMatrix, cls: str) -> dict[str, tuple[int, int]]:
    tp, fp, fn, tn = cm.ovr_counts(cls)
    return {
        "sensitivity": (tp, tp + fn),
        "specificity": (tn, tn + fp),
        "precision": (tp, tp + fp),
        "accuracy": (tp + tn, cm.total),
    }


def evaluation_report(
    truth: list[str],
    pred: list[str],
    classes: tuple[str, ...],
    level: float = 0.95,
    n_boot: int = 500,
    seed: int = 0,
) -> dict:
    """Per-class metrics with CIs, macro/micro averages, and the matrix."""
    cm = confusion_matrix(truth, pred, classes)
    per_class = {}
    for cls in classes:
        m = per_class_metrics(cm, cls)
        entry = m.as_dict()
        cis = {}
        for name, (k, n) in _proportion_counts(cm, cls).items():
            if n > 0:
                ci = wilson_ci(k, n, level)
                cis[name] = {"lo": round(ci.lo, 6), "hi": round(ci.hi, 6), "method": ci.method}
        fci = bootstrap_f1_ci(truth, pred, cls, n_boot=max(n_boot, 100), seed=seed, level=level)
        cis["f1"] = {"lo": round(fci.lo, 6), "hi": round(fci.hi, 6), "method": fci.method}
        entry["ci"] = cis
        per_class[cls] = entry
    return {
        "schema_version": 1,
        "classes": list(classes),
        "n_items": cm.total,
        "confusion_matrix": cm.counts.tolist(),
        "per_class": per_class,
        "macro": average_metrics(cm, "macro").as_dict(),
        "micro": average_metrics(cm, "micro").as_dict(),
        "ci_level": level,
    }


def _cell(entry: dict, metric: str) -> str:
    v = entry[metric] * 100.0
    ci = entry.get("ci", {}).get(metric)
    if ci is None:
        return f"{v:.1f}"
    return f"{v:.1f} ({ci['lo'] * 100:.1f}-{ci['hi'] * 100:.1f})"


def report_to_table(report: dict) -> str:
    """Plain-text table: metric rows, class columns, % (95% CI) cells."""
    classes = report["classes"]
    header = ["Metric"] + [f"{c} (95% CI)" for c in classes]
    rows = [header]
    names = {
        "sensitivity": "Sensitivity (Recall, %)",
        "specificity": "Specificity (%)",
        "precision": "Precision (%)",
        "f1": "F1-score (%)",
        "accuracy": "Accuracy (%)",
    }
    for metric in _METRIC_ROWS:
        row = [names[metric]]
        for c in classes:
            row.append(_cell(report["per_class"][c], metric))
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    lines.append("")
    lines.append(
        f"macro-F1 {report['macro']['f1']:.4f}  micro-F1 {report['micro']['f1']:.4f}"
        f"  accuracy {report['micro']['accuracy']:.4f}  n={report['n_items']}"
    )
    return "\n".join(lines)


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["metric"] + list(report["classes"]))
    for metric in _METRIC_ROWS:
        writer.writerow(
            [metric] + [_cell(report["per_class"][c], metric) for c in report["classes"]]
        )
    return buf.getvalue()


def save_report(report: dict, out_json: Path, out_csv: Path | None = None) -> None:
    Path(out_json).write_text(json.dumps(report, indent=2, sort_keys=True))
    if out_csv is not None:
        Path(out_csv).write_text(report_to_csv(report))


# --- figures -------------------------------------------------------------------

def confusion_matrix_figure(report: dict, path: Path) -> Path:
    classes = report["classes"]
    counts = np.asarray(report["confusion_matrix"], dtype=np.float64)
    row_sums = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, np.maximum(row_sums, 1.0))
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(classes), 0.8 + 0.6 * len(classes)))
    im = ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right")
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("Truth")
    for i in range(len(classes)):
        for j in range(len(classes)):
            if counts[i, j] > 0:
                color = "white" if frac[i, j] > 0.5 else "black"
                ax.text(j, i, int(counts[i, j]), ha="center", va="center", fontsize=8, color=color)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def roc_figure(scores: np.ndarray, truth: np.ndarray, path: Path, label: str = "") -> Path:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(int)
    order = np.argsort(-scores, kind="mergesort")
    t = truth[order]
    tps = np.cumsum(t)
    fps = np.cumsum(1 - t)
    tpr = tps / max(t.sum(), 1)
    fpr = fps / max((1 - t).sum(), 1)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(np.concatenate(([0], fpr)), np.concatenate(([0], tpr)), lw=1.5, label=label or None)
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    if label:
        ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def embedding_figure(points, path: Path) -> Path:
    """Scatter of curation embedding points, colored by label."""
    labels = sorted({p.label for p in points})
    cmap = plt.get_cmap("tab10")
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, lab in enumerate(labels):
        xs = [p.x for p in points if p.label == lab]
        ys = [p.y for p in points if p.label == lab]
        ax.scatter(xs, ys, s=8, color=cmap(i % 10), label=lab or "(unlabeled)", alpha=0.8)
    ax.set_xlabel("dim 1")
    ax.set_ylabel("dim 2")
    ax.legend(fontsize=7, markerscale=1.5)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def analysis_figure(result: dict, rec_mv: np.ndarray, fs: int, path: Path, max_seconds: float = 60.0) -> Path:
    """Trace strip with episode spans and noisy-window shading."""
    n = min(len(rec_mv), int(max_seconds * fs))
    t = np.arange(n) / fs
    fig, ax = plt.subplots(figsize=(10, 3))
    ax.plot(t, rec_mv[:n], lw=0.5, color="black")
    q = result["quality"]
    for i, v in enumerate(q["verdicts"]):
        if v["label"] == "Noisy":
            s = q["start_sample"] + i * q["stride_samples"]
            e = s + q["window_samples"]
            if s < n:
                ax.axvspan(s / fs, min(e, n) / fs, color="orange", alpha=0.25, lw=0)
    for ep in result["summary"]["episodes"]:
        if ep["start_sample"] < n:
            ax.axvspan(
                ep["start_sample"] / fs,
                min(ep["end_sample"], n) / fs,
                color="red",
                alpha=0.15,
                lw=0,
            )
            ax.text(
                ep["start_sample"] / fs, ax.get_ylim()[1] * 0.9, ep["rhythm"],
                fontsize=8, color="red",
            )
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mV")
    ax.set_title(
        f"{result['recording_ref']} lead {result['lead']} - dominant {result['summary']['dominant_rhythm']}"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
