"""Labeled corpora assembled from synthetic recordings.

Windows are harvested from continuously filtered leads, matching the
analysis pipeline's preprocessing, and keep their source patient so splits
can stay patient-disjoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ecgdesk.delineation import labels_from_fiducials
from ecgdesk.dsp import FilterSpec, bandpass_filter
from ecgdesk.signal_io.synth import NoiseSpan, RhythmSpan, SynthSpec, synthesize_recording

DEFAULT_FS = 250
WINDOW_S = 10.0
BEAT_WINDOW_S = 0.8


@dataclass
class WindowCorpus:
    """Windows [N, L] with one label per window and the source patient."""

    x: np.ndarray
    y: np.ndarray  # class codes (str) or per-sample int labels [N, L]
    patients: np.ndarray
    fs: int

    def subset(self, mask: np.ndarray) -> "WindowCorpus":
        return WindowCorpus(self.x[mask], self.y[mask], self.patients[mask], self.fs)

    def for_patients(self, patients: set[str]) -> "WindowCorpus":
        mask = np.isin(self.patients, sorted(patients))
        return self.subset(mask)

    def __len__(self) -> int:
        return len(self.x)


def _patient_seed(base_seed: int, patient: int, salt: int = 0) -> int:
    return int(base_seed * 1_000_003 + patient * 101 + salt)


# --- harvesting from one (recording, truth) pair -----------------------------

def harvest_rhythm(truth, x: np.ndarray, fs: int) -> tuple[list[np.ndarray], list[str]]:
    xs, ys = [], []
    for s, e, cls in truth.rhythm_spans:
        for _, w in _pure_windows(x, (s, e), fs):
            xs.append(w)
            ys.append(cls)
    return xs, ys


def harvest_delineation(truth, x: np.ndarray, fs: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    win = int(round(WINDOW_S * fs))
    labels = labels_from_fiducials(list(truth.fiducials), len(x))
    xs, ys = [], []
    for s, e, _cls in truth.rhythm_spans:
        for st, w in _pure_windows(x, (s, e), fs):
            xs.append(w)
            ys.append(labels[st : st + win])
    return xs, ys


def harvest_quality(truth, x: np.ndarray, fs: int) -> tuple[list[np.ndarray], list[str]]:
    win = int(round(WINDOW_S * fs))
    noisy_set = set()
    for s, e in truth.noise_spans:
        noisy_set.update(range(s // win, (e - 1) // win + 1))
    xs, ys = [], []
    for wi in range(len(x) // win):
        xs.append(x[wi * win : (wi + 1) * win])
        ys.append("Noisy" if wi in noisy_set else "Clean")
    return xs, ys


def harvest_beats(truth, x: np.ndarray, fs: int) -> tuple[list[np.ndarray], list[str]]:
    half = int(round(BEAT_WINDOW_S * fs / 2))
    xs, ys = [], []
    for fid, label in zip(truth.fiducials, truth.beat_labels):
        s, e = fid.qrs_on - half, fid.qrs_on + half
        if s < 0 or e > len(x):
            continue
        xs.append(x[s:e])
        ys.append(label)
    return xs, ys


def _filtered_lead(spec: SynthSpec, lead: str = "II", filter_spec: FilterSpec | None = None):
    rec, truth = synthesize_recording(spec)
    x = bandpass_filter(rec.lead_mv(lead), rec.sampling_rate_hz, filter_spec or FilterSpec())
    return rec, truth, x


def _pure_windows(x: np.ndarray, span: tuple[int, int], fs: int, window_s: float = WINDOW_S):
    """Window starts fully inside [span_start, span_end)."""
    win = int(round(window_s * fs))
    starts = []
    s, e = span
    start = s
    while start + win <= e:
        starts.append(start)
        start += win
    return [(st, x[st : st + win]) for st in starts]


def rhythm_corpus(
    classes: tuple[str, ...],
    n_patients: int,
    seed: int,
    span_s: float = 120.0,
    fs: int = DEFAULT_FS,
    prevalence: dict[str, float] | None = None,
) -> WindowCorpus:
    """Pure 10-s windows per rhythm class, several patients each.

    ``prevalence`` optionally scales a class's span length (e.g. 0.1 means
    that class contributes a tenth of the default windows per patient).
    """
    xs, ys, pats = [], [], []
    for p in range(n_patients):
        patient = f"p{p:03d}"
        t0 = 0.0
        spans = []
        for cls in classes:
            frac = (prevalence or {}).get(cls, 1.0)
            length = max(span_s * frac, 2 * WINDOW_S)
            spans.append(RhythmSpan(t0, t0 + length, cls))
            t0 += length
        spec = SynthSpec(
            duration_s=t0,
            fs=fs,
            seed=_patient_seed(seed, p),
            rhythm_script=tuple(spans),
            patient_ref=patient,
            recording_id=f"rhythm-{patient}",
        )
        _, truth, x = _filtered_lead(spec)
        for s, e, cls in truth.rhythm_spans:
            for _, w in _pure_windows(x, (s, e), fs):
                xs.append(w)
                ys.append(cls)
                pats.append(patient)
    return WindowCorpus(np.stack(xs), np.asarray(ys), np.asarray(pats), fs)


def delineation_corpus(
    n_patients: int,
    seed: int,
    classes: tuple[str, ...] = ("N", "SA", "SVT", "AV1"),
    span_s: float = 60.0,
    fs: int = DEFAULT_FS,
) -> WindowCorpus:
    """10-s windows with exact per-sample ISO/P/QRS/T labels.

    Defaults exclude AF: fibrillatory baseline overlaps T-wave tails, so
    their offsets are not recoverable to sample precision even in
    principle. SVT covers the absent-P case instead.
    """
    xs, ys, pats = [], [], []
    win = int(round(WINDOW_S * fs))
    for p in range(n_patients):
        patient = f"p{p:03d}"
        spans = []
        t0 = 0.0
        for cls in classes:
            spans.append(RhythmSpan(t0, t0 + span_s, cls))
            t0 += span_s
        spec = SynthSpec(
            duration_s=t0,
            fs=fs,
            seed=_patient_seed(seed, p, salt=7),
            rhythm_script=tuple(spans),
            patient_ref=patient,
            recording_id=f"delin-{patient}",
        )
        _, truth, x = _filtered_lead(spec)
        labels = labels_from_fiducials(list(truth.fiducials), len(x))
        for s, e, _cls in truth.rhythm_spans:
            for st, w in _pure_windows(x, (s, e), fs):
                xs.append(w)
                ys.append(labels[st : st + win])
                pats.append(patient)
    return WindowCorpus(np.stack(xs), np.stack(ys), np.asarray(pats), fs)


def quality_corpus(
    n_patients: int,
    seed: int,
    fs: int = DEFAULT_FS,
) -> WindowCorpus:
    """Clean vs artifact 10-s windows; noise spans are window-aligned."""
    rng = np.random.default_rng(seed)
    xs, ys, pats = [], [], []
    win = int(round(WINDOW_S * fs))
    kinds = ("drift", "burst", "flatline")
    for p in range(n_patients):
        patient = f"p{p:03d}"
        duration = 240.0
        rhythm = rng.choice(["N", "AF", "SVT"])
        n_windows = int(duration // WINDOW_S)
        noisy_windows = sorted(
            rng.choice(np.arange(1, n_windows - 1), size=6, replace=False).tolist()
        )
        noise_spans = []
        for i, wi in enumerate(noisy_windows):
            kind = kinds[i % len(kinds)]
            params = {}
            if kind == "burst":
                params = {"std_mv": float(rng.uniform(0.8, 1.6))}
            elif kind == "drift":
                params = {"amp_mv": float(rng.uniform(1.2, 2.2))}
            noise_spans.append(
                NoiseSpan(wi * WINDOW_S, (wi + 1) * WINDOW_S, kind, params)
            )
        spec = SynthSpec(
            duration_s=duration,
            fs=fs,
            seed=_patient_seed(seed, p, salt=13),
            rhythm_script=(RhythmSpan(0.0, duration, str(rhythm)),),
            noise_script=tuple(noise_spans),
            patient_ref=patient,
            recording_id=f"qual-{patient}",
        )
        _, truth, x = _filtered_lead(spec)
        noisy_set = set()
        for s, e in truth.noise_spans:
            first = s // win
            last = (e - 1) // win
            noisy_set.update(range(first, last + 1))
        for wi in range(n_windows):
            st = wi * win
            xs.append(x[st : st + win])
            ys.append("Noisy" if wi in noisy_set else "Clean")
            pats.append(patient)
    return WindowCorpus(np.stack(xs), np.asarray(ys), np.asarray(pats), fs)


def beat_corpus(
    n_patients: int,
    seed: int,
    fs: int = DEFAULT_FS,
) -> WindowCorpus:
    """Beat-centered 0.8-s windows labeled with the beat taxonomy."""
    rng = np.random.default_rng(seed)
    xs, ys, pats = [], [], []
    half = int(round(BEAT_WINDOW_S * fs / 2))
    for p in range(n_patients):
        patient = f"p{p:03d}"
        spans = (
            RhythmSpan(0.0, 90.0, "N", {"pvc_rate": 0.12, "pac_rate": 0.12}),
            RhythmSpan(90.0, 150.0, "AF"),
            RhythmSpan(150.0, 200.0, "J"),
            RhythmSpan(200.0, 250.0, "AFL"),
        )
        spec = SynthSpec(
            duration_s=250.0,
            fs=fs,
            seed=_patient_seed(seed, p, salt=29),
            rhythm_script=spans,
            patient_ref=patient,
            recording_id=f"beat-{patient}",
        )
        _, truth, x = _filtered_lead(spec)
        for fid, label in zip(truth.fiducials, truth.beat_labels):
            s = fid.qrs_on - half
            e = fid.qrs_on + half
            if s < 0 or e > len(x):
                continue
            xs.append(x[s:e])
            ys.append(label)
            pats.append(patient)
        # noise stretches double as beat-level X examples
        n_x = 6
        garbage = rng.normal(0.0, 0.8, n_x * 2 * half) + np.cumsum(
            rng.normal(0, 0.05, n_x * 2 * half)
        )
        for i in range(n_x):
            xs.append(garbage[i * 2 * half : (i + 1) * 2 * half])
            ys.append("X")
            pats.append(patient)
    return WindowCorpus(np.stack(xs), np.asarray(ys), np.asarray(pats), fs)
