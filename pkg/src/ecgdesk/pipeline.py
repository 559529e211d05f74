"""End-to-end analysis of one recording, and patient-level dataset splits.

Stage order is fixed: filter -> window -> quality -> delineate ->
beat/rhythm classify -> aggregate. Noisy windows are excluded from
delineation, classification, and aggregation. Windows are processed in
fixed-size chunks whose composition does not depend on the worker count,
so an N-worker run is byte-identical to a 1-worker run.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from ecgdesk.classify import (
    BEAT_CLASSES,
    RHYTHM_CLASSES,
    ClassProbabilities,
    RecordingSummary,
    aggregate_summary,
)
from ecgdesk.delineation import delineate_batch, labels_to_fiducials
from ecgdesk.dsp import FilterSpec, bandpass_filter
from ecgdesk.fiducials import FiducialSet
from ecgdesk.nn.checkpoint import CheckpointError, CheckpointRegistry
from ecgdesk.nn.layers import softmax
from ecgdesk.nn.model import model_forward
from ecgdesk.quality import QualityMask, QualityVerdict
from ecgdesk.signal_io.recording import EcgRecording
from ecgdesk.training import normalize_windows

SCHEMA_VERSION = 1
REQUIRED_MODELS = ("delineation", "beat", "rhythm", "quality")


@dataclass(frozen=True)
class AnalysisConfig:
    window_s: float = 10.0
    stride_s: float = 10.0
    filter_spec: FilterSpec = field(default_factory=FilterSpec)
    noisy_threshold: float = 0.5
    min_windows: int = 2
    merge_gap: int = 1
    beat_window_s: float = 0.8
    n_workers: int = 1
    chunk_size: int = 64  # fixed batching unit, independent of n_workers


@dataclass
class AnalysisResult:
    recording_ref: str
    lead: str
    model_versions: dict[str, str]
    summary: RecordingSummary
    quality: QualityMask
    window_preds: list[dict]
    intervals: list[dict]
    created_at: str
    wall_time_ms: float
    schema_version: int = SCHEMA_VERSION

    def to_dict(self, include_volatile: bool = True) -> dict:
        d = {
            "schema_version": self.schema_version,
            "recording_ref": self.recording_ref,
            "lead": self.lead,
            "model_versions": dict(sorted(self.model_versions.items())),
            "summary": self.summary.to_dict(),
            "quality": self.quality.to_dict(),
            "window_preds": self.window_preds,
            "intervals": self.intervals,
        }
        if include_volatile:
            d["created_at"] = self.created_at
            d["wall_time_ms"] = round(self.wall_time_ms, 3)
        return d

    def canonical_json(self, include_volatile: bool = False) -> str:
        return json.dumps(self.to_dict(include_volatile), sort_keys=True, separators=(",", ":"))


class MissingCheckpointError(CheckpointError):
    pass


def _load_models(registry: CheckpointRegistry) -> dict:
    models = {}
    for model_id in REQUIRED_MODELS:
        try:
            models[model_id] = registry.load(model_id)
        except CheckpointError:
            raise MissingCheckpointError(f"missing checkpoint: {model_id}") from None
    return models


def _window_starts(n_samples: int, fs: int, cfg: AnalysisConfig) -> tuple[list[int], int]:
    win = int(round(cfg.window_s * fs))
    stride = int(round(cfg.stride_s * fs))
    if win > n_samples:
        return [], win
    return list(range(0, n_samples - win + 1, stride)), win


def _chunk(seq: list, size: int) -> list[list]:
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def analyze_recording(
    rec: EcgRecording,
    lead: str,
    registry: CheckpointRegistry,
    cfg: AnalysisConfig | None = None,
) -> AnalysisResult:
    """Run the full pipeline on one lead of one recording."""
    t_start = time.perf_counter()
    cfg = cfg or AnalysisConfig()
    models = _load_models(registry)
    fs = rec.sampling_rate_hz
    x = bandpass_filter(rec.lead_mv(lead), fs, cfg.filter_spec)

    starts, win = _window_starts(len(x), fs, cfg)
    if not starts:
        raise ValueError("recording shorter than one analysis window")
    windows = np.stack([x[s : s + win] for s in starts])

    chunks = _chunk(list(range(len(starts))), cfg.chunk_size)

    def stage_one(idx_chunk: list[int]) -> dict:
        mat = windows[idx_chunk]
        normed = normalize_windows(mat)
        q_logits = model_forward(models["quality"], normed[:, np.newaxis, :])
        p_noisy = softmax(q_logits, axis=-1)[:, 1]
        clean_local = [i for i, p in enumerate(p_noisy) if p < cfg.noisy_threshold]
        out = {"p_noisy": p_noisy, "rhythm_probs": {}, "labels": {}}
        if clean_local:
            sub = normed[clean_local]
            r_logits = model_forward(models["rhythm"], sub[:, np.newaxis, :])
            r_probs = softmax(r_logits, axis=-1)
            d_logits = model_forward(models["delineation"], sub[:, np.newaxis, :])
            d_labels = np.argmax(d_logits, axis=2)
            for j, i_local in enumerate(clean_local):
                out["rhythm_probs"][i_local] = r_probs[j]
                out["labels"][i_local] = d_labels[j]
        return out

    if cfg.n_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_workers) as pool:
            chunk_results = list(pool.map(stage_one, chunks))
    else:
        chunk_results = [stage_one(c) for c in chunks]

    verdicts: list[QualityVerdict] = []
    window_probs: list[ClassProbabilities | None] = []
    fiducials: list[FiducialSet] = []
    for chunk, res in zip(chunks, chunk_results):
        for i_local, i_global in enumerate(chunk):
            p = float(res["p_noisy"][i_local])
            noisy = p >= cfg.noisy_threshold
            verdicts.append(
                QualityVerdict(label="Noisy" if noisy else "Clean", p_noisy=p)
            )
            if noisy:
                window_probs.append(None)
            else:
                window_probs.append(
                    ClassProbabilities(classes=RHYTHM_CLASSES, probs=res["rhythm_probs"][i_local])
                )
                beats = labels_to_fiducials(res["labels"][i_local], fs_hz=fs)
                fiducials.extend(b.shifted(starts[i_global]) for b in beats)

    stride_samples = starts[1] - starts[0] if len(starts) > 1 else win
    mask = QualityMask(
        start_sample=starts[0],
        stride_samples=stride_samples,
        window_samples=win,
        verdicts=tuple(verdicts),
    )

    # beat classification on QRS anchors from clean windows
    half = int(round(cfg.beat_window_s * fs / 2))
    anchors = [f.qrs_on for f in fiducials if f.qrs_on - half >= 0 and f.qrs_on + half <= len(x)]
    beat_probs: list[ClassProbabilities] = []
    if anchors:
        beat_windows = np.stack([x[a - half : a + half] for a in anchors])
        beat_chunks = _chunk(list(range(len(anchors))), cfg.chunk_size)

        def beat_stage(idx_chunk: list[int]) -> np.ndarray:
            normed = normalize_windows(beat_windows[idx_chunk])
            logits = model_forward(models["beat"], normed[:, np.newaxis, :])
            return softmax(logits, axis=-1)

        if cfg.n_workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.n_workers) as pool:
                probs_chunks = list(pool.map(beat_stage, beat_chunks))
        else:
            probs_chunks = [beat_stage(c) for c in beat_chunks]
        for pc in probs_chunks:
            beat_probs.extend(ClassProbabilities(classes=BEAT_CLASSES, probs=p) for p in pc)

    pred_pairs = list(zip(_extent_windows(rec.id, lead, starts, win, fs), window_probs))
    summary = aggregate_summary(
        pred_pairs,
        mask,
        beat_preds=beat_probs if beat_probs else None,
        min_windows=cfg.min_windows,
        merge_gap=cfg.merge_gap,
    )

    from ecgdesk.delineation import compute_intervals

    beats_sorted = sorted(fiducials, key=lambda f: f.qrs_on)
    measurements = compute_intervals(beats_sorted, fs)
    intervals = []
    for f, m in zip(beats_sorted, measurements):
        row = {"qrs_on": int(f.qrs_on)}
        row.update(m.to_dict())
        intervals.append(row)

    window_preds_out = []
    for i, probs in enumerate(window_probs):
        entry: dict = {"index": i, "start_sample": starts[i]}
        if probs is None:
            entry["excluded"] = True
            entry["class"] = None
        else:
            entry["excluded"] = False
            entry["class"] = probs.argmax_class
            entry["confidence"] = round(probs.confidence, 6)
            entry["probs"] = [round(float(v), 6) for v in probs.probs]
        window_preds_out.append(entry)

    versions = registry.model_versions()
    wall_ms = (time.perf_counter() - t_start) * 1000.0
    return AnalysisResult(
        recording_ref=rec.id,
        lead=lead,
        model_versions={k: versions[k] for k in REQUIRED_MODELS},
        summary=summary,
        quality=mask,
        window_preds=window_preds_out,
        intervals=intervals,
        created_at=datetime.now(timezone.utc).isoformat(),
        wall_time_ms=max(wall_ms, 1e-3),
    )


class _ExtentWindow:
    """Lightweight stand-in exposing just the bounds aggregation reads."""

    __slots__ = ("recording_ref", "lead", "start_sample", "end_sample", "sampling_rate_hz")

    def __init__(self, ref, lead, start, end, fs):
        self.recording_ref = ref
        self.lead = lead
        self.start_sample = start
        self.end_sample = end
        self.sampling_rate_hz = fs


def _extent_windows(ref, lead, starts, win, fs):
    return [_ExtentWindow(ref, lead, s, s + win, fs) for s in starts]


def make_split(
    patients: list[str],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict[str, str]:
    """Patient-level train/val/test assignment, deterministic per seed.

    Sizes land within one patient of the exact ratios (largest-remainder
    apportionment); no patient appears in two splits.
    """
    if len(patients) < 3:
        raise ValueError("need at least 3 patients")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    if len(set(patients)) != len(patients):
        raise ValueError("duplicate patient ids")
    rng = np.random.default_rng(seed)
    order = list(patients)
    rng.shuffle(order)
    n = len(order)
    names = ("train", "val", "test")
    exact = [r * n for r in ratios]
    base = [int(np.floor(e)) for e in exact]
    remainder = n - sum(base)
    fracs = sorted(range(3), key=lambda i: exact[i] - base[i], reverse=True)
    for i in range(remainder):
        base[fracs[i % 3]] += 1
    assignment = {}
    pos = 0
    for name, count in zip(names, base):
        for p in order[pos : pos + count]:
            assignment[p] = name
        pos += count
    return assignment
