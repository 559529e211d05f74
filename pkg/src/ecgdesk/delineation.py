"""Per-sample wave labeling, fiducial extraction, and interval computation.

Labels are ISO/P/QRS/T, one per sample. Fiducial offsets are half-open:
``offset`` is the first index after the wave. A beat is anchored on a QRS
run; the nearest preceding unassigned P run (within ``p_attach_ms``) and
the nearest following T run (within ``t_attach_ms``) attach to it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ecgdesk.fiducials import FiducialSet, IntervalMeasurement, WaveLabel
from ecgdesk.signal_io.recording import SegmentWindow

DEFAULT_MIN_RUN = 3
DEFAULT_P_ATTACH_MS = 300.0
DEFAULT_T_ATTACH_MS = 500.0


def delineate_window(ckpt, w: SegmentWindow) -> np.ndarray:
    """Label every sample of a preprocessed window with a WaveLabel.

    ``ckpt`` is a delineation ModelCheckpoint; returns an int array of
    len(w) WaveLabel values. The window is z-normalised internally, the
    model's input convention.
    """
    labels = delineate_batch(ckpt, w.samples_mv[np.newaxis, :])
    return labels[0]


def delineate_batch(ckpt, windows_mv: np.ndarray) -> np.ndarray:
    """Per-sample labels for a [B, L] batch of preprocessed windows."""
    from ecgdesk.dsp import znormalize
    from ecgdesk.nn.model import model_forward

    x = np.stack([znormalize(w) for w in windows_mv]).astype(np.float32)
    logits = model_forward(ckpt, x)
    if logits.ndim != 3 or logits.shape[1] != windows_mv.shape[1]:
        raise ValueError("delineation model must emit per-sample logits")
    return np.argmax(logits, axis=2).astype(np.int64)


def _runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal runs as (label, start, end) with end exclusive."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return []
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [labels.size]))
    return [(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def labels_to_fiducials(
    labels: np.ndarray,
    fs_hz: float = 250.0,
    min_run: int = DEFAULT_MIN_RUN,
    p_attach_ms: float = DEFAULT_P_ATTACH_MS,
    t_attach_ms: float = DEFAULT_T_ATTACH_MS,
) -> list[FiducialSet]:
    """Group wave runs into per-beat fiducial sets.

    Non-ISO runs shorter than ``min_run`` samples are discarded as flicker.
    """
    runs = [
        (lab, s, e)
        for lab, s, e in _runs(np.asarray(labels))
        if lab != WaveLabel.ISO and (e - s) >= min_run
    ]
    qrs = [(s, e) for lab, s, e in runs if lab == WaveLabel.QRS]
    p_runs = [(s, e) for lab, s, e in runs if lab == WaveLabel.P]
    t_runs = [(s, e) for lab, s, e in runs if lab == WaveLabel.T]

    p_window = int(round(p_attach_ms * fs_hz / 1000.0))
    t_window = int(round(t_attach_ms * fs_hz / 1000.0))
    p_used = [False] * len(p_runs)
    t_used = [False] * len(t_runs)
    beats = []
    for qi, (q_on, q_off) in enumerate(qrs):
        p_on = p_off = None
        # nearest preceding unassigned P run within the attach window
        for i in range(len(p_runs) - 1, -1, -1):
            ps, pe = p_runs[i]
            if p_used[i] or pe > q_on:
                continue
            if q_on - pe <= p_window:
                p_on, p_off = ps, pe
                p_used[i] = True
            break
        t_on = t_off = None
        next_q_on = qrs[qi + 1][0] if qi + 1 < len(qrs) else None
        for i, (ts, te) in enumerate(t_runs):
            if t_used[i] or ts < q_off:
                continue
            if next_q_on is not None and ts >= next_q_on:
                break
            if ts - q_off <= t_window:
                t_on, t_off = ts, te
                t_used[i] = True
            break
        beats.append(
            FiducialSet(
                qrs_on=q_on, qrs_off=q_off, p_on=p_on, p_off=p_off, t_on=t_on, t_off=t_off
            )
        )
    return beats


def compute_intervals(beats: list[FiducialSet], fs_hz: float) -> list[IntervalMeasurement]:
    """PR/QRS/QT per beat plus RR and heart rate between consecutive beats."""
    if fs_hz <= 0:
        raise ValueError("fs must be > 0")
    scale = 1000.0 / fs_hz
    out = []
    for i, b in enumerate(beats):
        pr = (b.qrs_on - b.p_on) * scale if b.p_on is not None else None
        qrs = (b.qrs_off - b.qrs_on) * scale
        qt = (b.t_off - b.qrs_on) * scale if b.t_off is not None else None
        rr = hr = None
        if i > 0:
            rr = (b.qrs_on - beats[i - 1].qrs_on) * scale
            if rr > 0:
                hr = 60000.0 / rr
        out.append(
            IntervalMeasurement(pr_ms=pr, qrs_ms=qrs, qt_ms=qt, rr_ms=rr, heart_rate_bpm=hr)
        )
    return out


@dataclass(frozen=True)
class BoundaryAccuracy:
    per_sample_acc: float
    tolerant_acc: float
    matched: int
    n_pred: int
    n_ref: int


def _match_sorted(pred: list[int], ref: list[int], tol: int) -> int:
    """Count of one-to-one matches between sorted boundary lists within tol."""
    i = j = matched = 0
    pred = sorted(pred)
    ref = sorted(ref)
    while i < len(pred) and j < len(ref):
        d = pred[i] - ref[j]
        if abs(d) <= tol:
            matched += 1
            i += 1
            j += 1
        elif d < 0:
            i += 1
        else:
            j += 1
    return matched


def labels_from_fiducials(beats: list[FiducialSet], n_samples: int) -> np.ndarray:
    """Reconstruct a WaveLabel sequence from fiducial sets (ISO elsewhere)."""
    labels = np.full(n_samples, int(WaveLabel.ISO), dtype=np.int64)
    for b in beats:
        if b.p_on is not None:
            labels[max(b.p_on, 0) : min(b.p_off, n_samples)] = WaveLabel.P
        labels[max(b.qrs_on, 0) : min(b.qrs_off, n_samples)] = WaveLabel.QRS
        if b.t_on is not None:
            labels[max(b.t_on, 0) : min(b.t_off, n_samples)] = WaveLabel.T
    return labels


def tolerant_boundary_accuracy(
    pred: list[FiducialSet],
    ref: list[FiducialSet],
    tol_samples: int,
    pred_labels: np.ndarray | None = None,
    ref_labels: np.ndarray | None = None,
    n_samples: int | None = None,
) -> BoundaryAccuracy:
    """Boundary-level accuracy with a +/- tol_samples matching window.

    A predicted boundary is a hit iff a same-type reference boundary lies
    within tol; unmatched boundaries on either side count as errors:
    ``tolerant_acc = matched / (n_pred + n_ref - matched)``. Per-sample
    accuracy is computed on the label sequences (reconstructed from the
    fiducials when not supplied).
    """
    if tol_samples < 0:
        raise ValueError("tol must be >= 0")
    by_type_pred: dict[str, list[int]] = {}
    by_type_ref: dict[str, list[int]] = {}
    for b in pred:
        for name, idx in b.boundaries().items():
            by_type_pred.setdefault(name, []).append(idx)
    for b in ref:
        for name, idx in b.boundaries().items():
            by_type_ref.setdefault(name, []).append(idx)
    matched = 0
    n_pred = sum(len(v) for v in by_type_pred.values())
    n_ref = sum(len(v) for v in by_type_ref.values())
    for name in set(by_type_pred) | set(by_type_ref):
        matched += _match_sorted(
            by_type_pred.get(name, []), by_type_ref.get(name, []), tol_samples
        )
    denom = n_pred + n_ref - matched
    tolerant = matched / denom if denom > 0 else 1.0

    if pred_labels is None or ref_labels is None:
        if n_samples is None:
            highest = [b.boundaries() for b in list(pred) + list(ref)]
            n_samples = max((max(d.values()) for d in highest), default=0)
        pred_labels = labels_from_fiducials(pred, n_samples)
        ref_labels = labels_from_fiducials(ref, n_samples)
    pred_labels = np.asarray(pred_labels)
    ref_labels = np.asarray(ref_labels)
    if pred_labels.shape != ref_labels.shape:
        raise ValueError("label sequences must have equal length")
    per_sample = float(np.mean(pred_labels == ref_labels)) if pred_labels.size else 1.0
    return BoundaryAccuracy(
        per_sample_acc=per_sample,
        tolerant_acc=tolerant,
        matched=matched,
        n_pred=n_pred,
        n_ref=n_ref,
    )
