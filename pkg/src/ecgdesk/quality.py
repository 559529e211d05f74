"""Clean/noisy screening of windows and the recording-level quality mask.

A sample counts as noisy if any covering window is noisy (conservative
union); noisy windows are excluded from rhythm aggregation downstream but
kept visible to the review UI.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ecgdesk.dsp import znormalize
from ecgdesk.nn.layers import softmax
from ecgdesk.nn.model import model_forward
from ecgdesk.signal_io.recording import EcgRecording, SegmentWindow, window_segments

DEFAULT_NOISY_THRESHOLD = 0.5


@dataclass(frozen=True)
class QualityVerdict:
    label: str  # "Clean" | "Noisy"
    p_noisy: float

    def __post_init__(self):
        if self.label not in ("Clean", "Noisy"):
            raise ValueError("label must be Clean or Noisy")
        if not 0.0 <= self.p_noisy <= 1.0:
            raise ValueError("p_noisy must be in [0, 1]")


@dataclass(frozen=True)
class QualityMask:
    """Verdicts on a fixed window grid (start sample, stride in samples)."""

    start_sample: int
    stride_samples: int
    window_samples: int
    verdicts: tuple[QualityVerdict, ...]

    @property
    def n_windows(self) -> int:
        return len(self.verdicts)

    def window_bounds(self, i: int) -> tuple[int, int]:
        s = self.start_sample + i * self.stride_samples
        return s, s + self.window_samples

    def noisy_window_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.verdicts) if v.label == "Noisy"]

    def is_sample_noisy(self, sample: int) -> bool:
        """True if any covering window is Noisy."""
        for i in self.noisy_window_indices():
            s, e = self.window_bounds(i)
            if s <= sample < e:
                return True
        return False

    def noisy_sample_spans(self) -> list[tuple[int, int]]:
        """Union of noisy window extents, merged."""
        spans = [self.window_bounds(i) for i in self.noisy_window_indices()]
        spans.sort()
        merged: list[tuple[int, int]] = []
        for s, e in spans:
            if merged and s <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], e))
            else:
                merged.append((s, e))
        return merged

    def to_dict(self) -> dict:
        return {
            "start_sample": self.start_sample,
            "stride_samples": self.stride_samples,
            "window_samples": self.window_samples,
            "verdicts": [{"label": v.label, "p_noisy": round(v.p_noisy, 6)} for v in self.verdicts],
        }


def quality_probs(ckpt, windows_mv: np.ndarray) -> np.ndarray:
    """Batched p_noisy for [B, L] preprocessed windows."""
    x = np.stack([znormalize(w) for w in windows_mv])
    logits = model_forward(ckpt, x)
    return softmax(logits, axis=-1)[:, 1]


def classify_quality(ckpt, w: SegmentWindow, threshold: float = DEFAULT_NOISY_THRESHOLD) -> QualityVerdict:
    """Screen one preprocessed window; Noisy iff p_noisy >= threshold."""
    p_noisy = float(quality_probs(ckpt, w.samples_mv[np.newaxis, :])[0])
    label = "Noisy" if p_noisy >= threshold else "Clean"
    return QualityVerdict(label=label, p_noisy=p_noisy)


def quality_mask(
    rec: EcgRecording,
    lead: str,
    ckpt,
    window_s: float,
    stride_s: float,
    threshold: float = DEFAULT_NOISY_THRESHOLD,
    preprocess=None,
) -> QualityMask:
    """Sliding-window screening across one lead of a recording."""
    windows = window_segments(rec, lead, window_s, stride_s)
    if not windows:
        raise ValueError("recording shorter than one window")
    return mask_from_windows(windows, ckpt, threshold=threshold, preprocess=preprocess)


def mask_from_windows(
    windows: list[SegmentWindow],
    ckpt,
    threshold: float = DEFAULT_NOISY_THRESHOLD,
    preprocess=None,
) -> QualityMask:
    if not windows:
        raise ValueError("no windows")
    mat = np.stack(
        [preprocess(w.samples_mv) if preprocess else w.samples_mv for w in windows]
    )
    probs = quality_probs(ckpt, mat)
    verdicts = tuple(
        QualityVerdict(label="Noisy" if p >= threshold else "Clean", p_noisy=float(p))
        for p in probs
    )
    stride = (
        windows[1].start_sample - windows[0].start_sample if len(windows) > 1 else len(windows[0])
    )
    return QualityMask(
        start_sample=windows[0].start_sample,
        stride_samples=stride,
        window_samples=len(windows[0]),
        verdicts=verdicts,
    )
