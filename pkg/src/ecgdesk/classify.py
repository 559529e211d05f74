"""Beat-level and rhythm-level classification plus recording aggregation.

Beat labels: AF, AFL, J, N, S, V, X. Rhythm labels: AF, AFL, AV1, AV21,
AV22, AV3, N, SA, SVT, X. AF/AFL appear in both sets by design; X doubles
as the reject/noise output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ecgdesk.dsp import znormalize
from ecgdesk.nn.layers import softmax
from ecgdesk.nn.model import model_forward
from ecgdesk.quality import QualityMask
from ecgdesk.signal_io.recording import SegmentWindow

BEAT_CLASSES = ("AF", "AFL", "J", "N", "S", "V", "X")
RHYTHM_CLASSES = ("AF", "AFL", "AV1", "AV21", "AV22", "AV3", "N", "SA", "SVT", "X")

DEFAULT_MIN_WINDOWS = 2
DEFAULT_MERGE_GAP = 1


@dataclass(frozen=True)
class ClassProbabilities:
    classes: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (len(self.classes),):
            raise ValueError("probs length must match class set")
        if abs(p.sum() - 1.0) > 1e-6 or np.any(p < -1e-9):
            raise ValueError("probs is not a probability simplex")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def argmax_index(self) -> int:
        # lowest index wins ties
        return int(np.argmax(self.probs))

    @property
    def argmax_class(self) -> str:
        return self.classes[self.argmax_index]

    @property
    def confidence(self) -> float:
        return float(self.probs[self.argmax_index])


@dataclass(frozen=True)
class Episode:
    rhythm: str
    start_sample: int
    end_sample: int
    mean_confidence: float

    def __post_init__(self):
        if self.end_sample <= self.start_sample:
            raise ValueError("end must exceed start")
        if not 0.0 <= self.mean_confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "rhythm": self.rhythm,
            "start_sample": self.start_sample,
            "end_sample": self.end_sample,
            "mean_confidence": round(self.mean_confidence, 6),
        }


@dataclass(frozen=True)
class RecordingSummary:
    dominant_rhythm: str
    episodes: tuple[Episode, ...]
    ventricular_ectopic_burden: float | None
    windows_analyzed: int
    windows_excluded: int

    def to_dict(self) -> dict:
        return {
            "dominant_rhythm": self.dominant_rhythm,
            "episodes": [e.to_dict() for e in self.episodes],
            "ventricular_ectopic_burden": (
                None
                if self.ventricular_ectopic_burden is None
                else round(self.ventricular_ectopic_burden, 6)
            ),
            "windows_analyzed": self.windows_analyzed,
            "windows_excluded": self.windows_excluded,
        }


def _classify(ckpt, x: np.ndarray, classes: tuple[str, ...]) -> ClassProbabilities:
    logits = model_forward(ckpt, x)
    return ClassProbabilities(classes=classes, probs=softmax(logits, axis=-1))


def classify_beat_window(ckpt, w: SegmentWindow) -> ClassProbabilities:
    """7-class probabilities for a beat-centered, z-normalised window."""
    return _classify(ckpt, znormalize(w.samples_mv), BEAT_CLASSES)


def classify_rhythm_window(ckpt, w: SegmentWindow) -> ClassProbabilities:
    """10-class probabilities for a 10-second lead-II window."""
    expected = 10 * w.sampling_rate_hz
    if len(w.samples_mv) != expected:
        raise ValueError("window must be 10 s")
    return _classify(ckpt, znormalize(w.samples_mv), RHYTHM_CLASSES)


def classify_windows_batch(ckpt, windows_mv: np.ndarray, classes: tuple[str, ...]) -> list[ClassProbabilities]:
    """Vectorised classification of [B, L] preprocessed windows."""
    x = np.stack([znormalize(w) for w in windows_mv])
    logits = model_forward(ckpt, x)
    probs = softmax(logits, axis=-1)
    return [ClassProbabilities(classes=classes, probs=p) for p in probs]


def detect_episodes(
    window_preds: list[tuple[SegmentWindow, ClassProbabilities]],
    mask: QualityMask,
    min_windows: int = DEFAULT_MIN_WINDOWS,
    merge_gap: int = DEFAULT_MERGE_GAP,
) -> list[Episode]:
    """Merge contiguous same-class windows into episodes.

    Noisy windows are skipped; gaps of at most ``merge_gap`` windows of a
    different or noisy label are absorbed between same-class windows; runs
    shorter than ``min_windows`` members or labelled N never become
    episodes. Confidence is the mean argmax probability over member
    windows (absorbed gaps excluded).
    """
    if mask.n_windows != len(window_preds):
        raise ValueError("prediction grid does not match quality mask")
    noisy = set(mask.noisy_window_indices())
    n = len(window_preds)
    labels: list[str | None] = [
        None if i in noisy else window_preds[i][1].argmax_class for i in range(n)
    ]
    episodes: list[Episode] = []
    i = 0
    while i < n:
        if labels[i] is None:
            i += 1
            continue
        run_class = labels[i]
        members = [i]
        gap = 0
        j = i + 1
        while j < n:
            if labels[j] == run_class:
                members.append(j)
                gap = 0
            else:
                gap += 1
                if gap > merge_gap:
                    break
            j += 1
        if run_class != "N" and len(members) >= min_windows:
            start_w, _ = window_preds[members[0]]
            end_w, _ = window_preds[members[-1]]
            conf = float(np.mean([window_preds[k][1].confidence for k in members]))
            episodes.append(
                Episode(
                    rhythm=run_class,
                    start_sample=start_w.start_sample,
                    end_sample=end_w.end_sample,
                    mean_confidence=conf,
                )
            )
        i = members[-1] + 1
    return episodes


def aggregate_summary(
    window_preds: list[tuple[SegmentWindow, ClassProbabilities]],
    mask: QualityMask,
    beat_preds: list[ClassProbabilities] | None = None,
    min_windows: int = DEFAULT_MIN_WINDOWS,
    merge_gap: int = DEFAULT_MERGE_GAP,
) -> RecordingSummary:
    """Dominant rhythm (modal argmax over non-noisy windows) plus episodes.

    Ties break by higher mean probability, then lowest class index. If every
    window is noisy the dominant rhythm is X. Ventricular ectopic burden is
    the argmax-V fraction of supplied beat predictions.
    """
    if not window_preds:
        raise ValueError("no window predictions")
    noisy = set(mask.noisy_window_indices())
    analyzed = [i for i in range(len(window_preds)) if i not in noisy]
    if not analyzed:
        dominant = "X"
    else:
        classes = window_preds[0][1].classes
        votes = np.zeros(len(classes), dtype=np.int64)
        prob_sums = np.zeros(len(classes), dtype=np.float64)
        for i in analyzed:
            probs = window_preds[i][1]
            votes[probs.argmax_index] += 1
            prob_sums += probs.probs
        top = votes.max()
        tied = np.flatnonzero(votes == top)
        if len(tied) == 1:
            dominant = classes[tied[0]]
        else:
            mean_probs = prob_sums[tied] / len(analyzed)
            best = tied[np.argmax(mean_probs)]  # argmax takes lowest index on ties
            dominant = classes[best]
    episodes = detect_episodes(window_preds, mask, min_windows=min_windows, merge_gap=merge_gap)
    burden = None
    if beat_preds is not None and len(beat_preds) > 0:
        n_v = sum(1 for p in beat_preds if p.argmax_class == "V")
        burden = n_v / len(beat_preds)
    elif beat_preds is not None:
        burden = 0.0
    return RecordingSummary(
        dominant_rhythm=dominant,
        episodes=tuple(episodes),
        ventricular_ectopic_burden=burden,
        windows_analyzed=len(analyzed),
        windows_excluded=len(window_preds) - len(analyzed),
    )
