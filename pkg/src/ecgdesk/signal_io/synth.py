"""Synthetic ECG generator with exact ground truth.

Beats are built from truncated Gaussian bumps (distinct widths and
amplitudes for P, QRS, T) so every fiducial index is known analytically.
Rhythm scripts assign a rhythm class generator to each span; noise scripts
overlay artifact spans (baseline drift, burst noise, flat line). The whole
generation is a pure function of the spec and seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from ecgdesk.fiducials import FiducialSet
from ecgdesk.signal_io.recording import EcgRecording, mv_to_adc

RHYTHM_CODES = ("AF", "AFL", "AV1", "AV21", "AV22", "AV3", "N", "SA", "SVT", "X")
# generator-only span codes: usable in scripts (e.g. junctional spans for the
# beat corpus) but not part of the rhythm-classifier label set
SPAN_CODES = RHYTHM_CODES + ("J",)
NOISE_KINDS = ("drift", "burst", "flatline")

# projection factors relative to the synthesized lead II source
LEAD_FACTORS = {"I": 0.55, "II": 1.0, "III": 0.45}


@dataclass(frozen=True)
class RhythmSpan:
    start_s: float
    end_s: float
    rhythm: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rhythm not in SPAN_CODES:
            raise ValueError(f"unknown rhythm class: {self.rhythm}")
        if not self.end_s > self.start_s:
            raise ValueError("span must have positive duration")


@dataclass(frozen=True)
class NoiseSpan:
    start_s: float
    end_s: float
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind: {self.kind}")
        if not self.end_s > self.start_s:
            raise ValueError("span must have positive duration")


@dataclass(frozen=True)
class SynthSpec:
    duration_s: float
    fs: int = 250
    seed: int = 0
    rhythm_script: tuple[RhythmSpan, ...] = ()
    noise_script: tuple[NoiseSpan, ...] = ()
    leads: tuple[str, ...] = ("I", "II", "III")
    gain_adc_per_mv: float = 200.0
    recording_id: str = ""
    patient_ref: str = ""
    baseline_noise_mv: float = 0.006

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration must be > 0")
        if self.fs < 50:
            raise ValueError("fs must be >= 50")
        script = tuple(self.rhythm_script) or (
            RhythmSpan(0.0, self.duration_s, "N"),
        )
        spans = sorted(script, key=lambda s: s.start_s)
        for a, b in zip(spans, spans[1:]):
            if b.start_s < a.end_s:
                raise ValueError("overlapping rhythm spans")
        object.__setattr__(self, "rhythm_script", tuple(spans))
        object.__setattr__(self, "noise_script", tuple(self.noise_script))
        object.__setattr__(self, "leads", tuple(self.leads))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(
            duration_s=float(d["duration_s"]),
            fs=int(d.get("fs", 250)),
            seed=int(d.get("seed", 0)),
            rhythm_script=tuple(
                RhythmSpan(float(s["start_s"]), float(s["end_s"]), s["rhythm"], dict(s.get("params", {})))
                for s in d.get("rhythm_script", [])
            ),
            noise_script=tuple(
                NoiseSpan(float(s["start_s"]), float(s["end_s"]), s["kind"], dict(s.get("params", {})))
                for s in d.get("noise_script", [])
            ),
            leads=tuple(d.get("leads", ("I", "II", "III"))),
            gain_adc_per_mv=float(d.get("gain_adc_per_mv", 200.0)),
            recording_id=str(d.get("recording_id", "")),
            patient_ref=str(d.get("patient_ref", "")),
            baseline_noise_mv=float(d.get("baseline_noise_mv", 0.008)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GroundTruth:
    """Exact generator output: fiducials, per-beat labels, and span maps."""

    fiducials: tuple[FiducialSet, ...]
    beat_labels: tuple[str, ...]
    rhythm_spans: tuple[tuple[int, int, str], ...]
    noise_spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.fiducials) != len(self.beat_labels):
            raise ValueError("one label per beat required")


def _bump(n: int) -> np.ndarray:
    """Half-sine bump over n samples: 0 at both ends with nonzero edge slope.

    The linear rise at the edges keeps wave onsets/offsets detectable above
    the measurement-noise floor, which a Gaussian tail would bury.
    """
    if n <= 1:
        return np.zeros(n)
    return np.sin(np.pi * np.linspace(0.0, 1.0, n))


def _add_wave(signal: np.ndarray, on: int, off: int, amp: float) -> None:
    on_c, off_c = max(on, 0), min(off, len(signal))
    if off_c <= on_c:
        return
    full = amp * _bump(off - on)
    signal[on_c:off_c] += full[on_c - on : off_c - on]


@dataclass
class _BeatShape:
    """Per-beat morphology in seconds, relative to QRS onset at 0."""

    qrs_dur: float = 0.09
    qrs_amp: float = 1.1
    biphasic: bool = False
    p_present: bool = True
    pr: float = 0.16
    p_dur: float = 0.09
    p_amp: float = 0.15
    t_present: bool = True
    st_gap: float = 0.10
    t_dur: float = 0.16
    t_amp: float = 0.30


def _render_beat(
    signal: np.ndarray, fs: int, qrs_on: int, shape: _BeatShape
) -> FiducialSet:
    qrs_off = qrs_on + max(int(round(shape.qrs_dur * fs)), 4)
    if shape.biphasic:
        # wide ventricular complex: R bump then a discordant S dip
        width = qrs_off - qrs_on
        split = qrs_on + int(round(width * 0.55))
        _add_wave(signal, qrs_on, split + int(round(width * 0.15)), shape.qrs_amp)
        _add_wave(signal, split - int(round(width * 0.1)), qrs_off, -0.45 * shape.qrs_amp)
    else:
        _add_wave(signal, qrs_on, qrs_off, shape.qrs_amp)
    p_on = p_off = None
    if shape.p_present:
        p_off = qrs_on - max(int(round((shape.pr - shape.p_dur) * fs)), 1)
        p_on = p_off - max(int(round(shape.p_dur * fs)), 4)
        if p_on >= 0 and p_off <= qrs_on:
            _add_wave(signal, p_on, p_off, shape.p_amp)
        else:
            p_on = p_off = None
    t_on = t_off = None
    if shape.t_present:
        t_on = qrs_off + max(int(round(shape.st_gap * fs)), 1)
        t_off = t_on + max(int(round(shape.t_dur * fs)), 4)
        if t_off <= len(signal):
            _add_wave(signal, t_on, t_off, shape.t_amp)
        else:
            t_on = t_off = None
    return FiducialSet(qrs_on=qrs_on, qrs_off=qrs_off, p_on=p_on, p_off=p_off, t_on=t_on, t_off=t_off)


def _orphan_p(signal: np.ndarray, fs: int, p_on: int, shape: _BeatShape) -> None:
    p_off = p_on + max(int(round(shape.p_dur * fs)), 4)
    _add_wave(signal, p_on, p_off, shape.p_amp)


def _span_beats(
    signal: np.ndarray,
    fs: int,
    span: RhythmSpan,
    rng: np.random.Generator,
    physio: dict,
) -> tuple[list[FiducialSet], list[str]]:
    """Render one rhythm span; returns fiducials and per-beat labels."""
    code = span.rhythm
    p = span.params
    start = int(round(span.start_s * fs))
    end = min(int(round(span.end_s * fs)), len(signal))
    amp_scale = physio["amp_scale"]

    base = _BeatShape(
        qrs_amp=1.1 * amp_scale,
        p_amp=0.15 * amp_scale,
        t_amp=0.30 * amp_scale,
        pr=physio["pr"],
        qrs_dur=physio["qrs_dur"],
    )

    if code == "X":
        # unreadable span: low-frequency garbage plus wideband noise, no beats
        n = end - start
        t = np.arange(n) / fs
        garbage = 0.8 * amp_scale * np.sin(2 * np.pi * rng.uniform(0.8, 2.0) * t + rng.uniform(0, 2 * np.pi))
        garbage += rng.normal(0.0, p.get("std_mv", 0.45), n)
        signal[start:end] += garbage
        return [], []

    if code == "AF":
        bpm = p.get("bpm", rng.uniform(80.0, 130.0))
        n = end - start
        t = np.arange(n) / fs
        fib = np.zeros(n)
        for _ in range(4):
            fib += rng.uniform(0.03, 0.06) * np.sin(
                2 * np.pi * rng.uniform(4.0, 8.0) * t + rng.uniform(0, 2 * np.pi)
            )
        signal[start:end] += fib * amp_scale
    elif code == "AFL":
        flut_hz = p.get("flutter_hz", rng.uniform(4.0, 6.0))
        ratio = p.get("conduction_ratio", int(rng.integers(2, 4)))
        bpm = p.get("bpm", flut_hz * 60.0 / ratio)
        n = end - start
        t = np.arange(n) / fs
        flut_amp = p.get("flutter_amp", rng.uniform(0.08, 0.16))
        saw = 2.0 * ((t * flut_hz) % 1.0) - 1.0
        signal[start:end] += flut_amp * amp_scale * saw
    elif code == "SVT":
        bpm = p.get("bpm", rng.uniform(165.0, 205.0))
    elif code == "AV3":
        bpm = p.get("bpm", rng.uniform(34.0, 44.0))
    else:
        bpm = p.get("bpm", rng.uniform(55.0, 95.0))

    rr_base = 60.0 / bpm * fs
    pvc_rate = p.get("pvc_rate", 0.0)
    pac_rate = p.get("pac_rate", 0.0)
    rr_jitter = p.get("rr_jitter")  # overrides the class default when set
    pr_jitter_sd = p.get("pr_jitter", 0.004)

    def jittered(default_sd: float) -> float:
        sd = default_sd if rr_jitter is None else rr_jitter
        return float(rng.normal(1.0, sd)) if sd > 0 else 1.0

    fiducials: list[FiducialSet] = []
    labels: list[str] = []

    # atrial timeline for third-degree block: independent P waves
    if code == "AV3":
        atrial_rr = 60.0 / rng.uniform(72.0, 95.0) * fs
        pos = start + rng.uniform(0.2, 0.8) * atrial_rr
        while pos < end - base.p_dur * fs:
            _orphan_p(signal, fs, int(round(pos)), base)
            pos += atrial_rr * rng.normal(1.0, 0.02)

    wenckebach_step = 0
    pr_current = base.pr
    start_offset = p.get("start_offset")
    cursor = start + rr_base * (rng.uniform(0.3, 0.7) if start_offset is None else float(start_offset))
    margin = int(round(0.55 * fs))  # room for the T wave at the span end
    while cursor < end - margin:
        qrs_on = int(round(cursor))
        shape = replace(base)
        label = "N"
        rr_factor = 1.0

        if code in ("AF", "AFL", "SVT", "AV3"):
            shape.p_present = False
            label = {"AF": "AF", "AFL": "AFL", "SVT": "S", "AV3": "V"}[code]
            if code == "AF":
                rr_factor = float(rng.lognormal(0.0, 0.24 if rr_jitter is None else rr_jitter))
            elif code == "AFL":
                rr_factor = jittered(0.01)
            elif code == "SVT":
                rr_factor = jittered(0.012)
                shape.t_amp *= 0.6
                shape.st_gap = 0.06
                shape.t_dur = 0.12
            else:  # ventricular escape rhythm
                rr_factor = jittered(0.015)
                shape.biphasic = True
                shape.qrs_dur = 0.15
                shape.t_amp = -0.25 * amp_scale
        elif code == "J":
            shape.p_present = False
            label = "J"
            rr_factor = jittered(0.02)
        elif code == "SA":
            phase = (cursor - start) / fs
            rr_factor = 1.0 + 0.16 * np.sin(2 * np.pi * 0.25 * phase) + (float(rng.normal(0.0, 0.015)) if (rr_jitter is None or rr_jitter > 0) else 0.0)
        elif code == "AV1":
            shape.pr = p.get("pr", physio["pr_long"])
            rr_factor = jittered(0.02)
        elif code == "AV21":
            # Wenckebach: PR stretches each beat, then one P is not conducted
            cycle = p.get("cycle", 4)
            shape.pr = base.pr + 0.04 * wenckebach_step
            wenckebach_step += 1
            if wenckebach_step >= cycle:
                wenckebach_step = 0
                p_on = qrs_on - int(round(shape.pr * fs))
                if p_on > start:
                    _orphan_p(signal, fs, p_on, base)
                cursor += rr_base
                continue
            rr_factor = jittered(0.02)
        elif code == "AV22":
            cycle = p.get("cycle", 3)
            wenckebach_step += 1
            if wenckebach_step >= cycle:
                wenckebach_step = 0
                p_on = qrs_on - int(round((base.pr - base.p_dur / 2) * fs))
                if p_on > start:
                    _orphan_p(signal, fs, p_on, base)
                cursor += rr_base
                continue
            rr_factor = jittered(0.02)
        else:  # N
            rr_factor = jittered(0.02)
            roll = rng.uniform()
            if roll < pvc_rate:
                label = "V"
                shape.p_present = False
                shape.biphasic = True
                shape.qrs_dur = rng.uniform(0.14, 0.17)
                shape.qrs_amp = 1.5 * amp_scale
                shape.t_amp = -0.3 * amp_scale
                rr_factor = 0.72
            elif roll < pvc_rate + pac_rate:
                label = "S"
                shape.p_amp = 0.10 * amp_scale
                shape.pr = 0.13
                rr_factor = 0.76

        pr_jitter = float(rng.normal(0.0, pr_jitter_sd)) if pr_jitter_sd > 0 else 0.0
        if shape.p_present:
            shape.pr = max(shape.pr + pr_jitter, shape.p_dur + 0.02)
        fid = _render_beat(signal, fs, qrs_on, shape)
        fiducials.append(fid)
        labels.append(label)
        step = rr_base * rr_factor
        if label in ("V", "S"):
            step += rr_base * (1.0 - rr_factor)  # compensatory pause
        cursor += step
    return fiducials, labels


def _apply_noise(
    signal: np.ndarray, fs: int, span: NoiseSpan, rng: np.random.Generator
) -> tuple[int, int]:
    start = max(int(round(span.start_s * fs)), 0)
    end = min(int(round(span.end_s * fs)), len(signal))
    n = end - start
    if n <= 0:
        return (start, start)
    p = span.params
    if span.kind == "drift":
        t = np.arange(n) / fs
        amp = p.get("amp_mv", 1.6)
        freq = p.get("freq_hz", rng.uniform(0.15, 0.4))
        wander = amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        wander += np.cumsum(rng.normal(0.0, amp * 0.01, n))
        signal[start:end] += wander
    elif span.kind == "burst":
        std = p.get("std_mv", 1.2)
        envelope = 0.5 * (1.0 + np.sin(2 * np.pi * np.arange(n) / max(n, 1) - np.pi / 2))
        signal[start:end] += rng.normal(0.0, std, n) * (0.4 + 0.6 * envelope)
    elif span.kind == "flatline":
        signal[start:end] = 0.0
    return (start, end)


def synthesize_recording(spec: SynthSpec) -> tuple[EcgRecording, GroundTruth]:
    """Generate a recording plus exact ground truth; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    fs = spec.fs
    n = int(round(spec.duration_s * fs))
    source = np.zeros(n, dtype=np.float64)

    # per-recording physiology so synthetic patients differ
    physio = {
        "amp_scale": float(rng.uniform(0.85, 1.15)),
        "pr": float(rng.uniform(0.14, 0.18)),
        "pr_long": float(rng.uniform(0.26, 0.34)),
        "qrs_dur": float(rng.uniform(0.08, 0.10)),
    }

    fiducials: list[FiducialSet] = []
    beat_labels: list[str] = []
    rhythm_spans: list[tuple[int, int, str]] = []
    for span in spec.rhythm_script:
        if span.end_s > spec.duration_s + 1e-9:
            raise ValueError("rhythm span exceeds recording duration")
        fids, labels = _span_beats(source, fs, span, rng, physio)
        fiducials.extend(fids)
        beat_labels.extend(labels)
        rhythm_spans.append(
            (int(round(span.start_s * fs)), min(int(round(span.end_s * fs)), n), span.rhythm)
        )

    if spec.baseline_noise_mv > 0:
        source += rng.normal(0.0, spec.baseline_noise_mv, n)

    noise_spans: list[tuple[int, int]] = []
    flat_spans: list[tuple[int, int]] = []
    for span in spec.noise_script:
        if span.kind == "flatline":
            flat_spans.append((int(round(span.start_s * fs)), int(round(span.end_s * fs))))
            continue
        noise_spans.append(_apply_noise(source, fs, span, rng))

    leads_mv = np.empty((len(spec.leads), n), dtype=np.float64)
    for i, lead in enumerate(spec.leads):
        leads_mv[i] = source * LEAD_FACTORS.get(lead, 0.8)

    # flatline clears all leads after projection (electrode-off behaviour)
    for span in spec.noise_script:
        if span.kind == "flatline":
            s = max(int(round(span.start_s * fs)), 0)
            e = min(int(round(span.end_s * fs)), n)
            if e > s:
                leads_mv[:, s:e] = 0.0
                noise_spans.append((s, e))

    rec = EcgRecording(
        id=spec.recording_id or f"synth-{spec.seed}",
        patient_ref=spec.patient_ref or f"patient-{spec.seed}",
        sampling_rate_hz=fs,
        leads=spec.leads,
        gain_adc_per_mv=spec.gain_adc_per_mv,
        samples=mv_to_adc(leads_mv, spec.gain_adc_per_mv),
        start_time=datetime(2024, 1, 1, tzinfo=timezone.utc),
    )
    truth = GroundTruth(
        fiducials=tuple(fiducials),
        beat_labels=tuple(beat_labels),
        rhythm_spans=tuple(rhythm_spans),
        noise_spans=tuple(sorted(noise_spans)),
    )
    return rec, truth
