"""ECG recording container and the two on-disk formats.

``binary-v1`` is the canonical format: 4-byte magic ``ECG1``, a u32
little-endian header length, a UTF-8 JSON header
``{id, patient_ref, fs, leads, gain, start_time}``, then frames of one
int16 LE sample per lead in header lead order.

``csv`` is an interchange format: an optional ``# ecgdesk-meta: {...}``
comment carrying the header fields, a ``t_s,<lead>...`` column row, and
millivolt values. Without the meta comment, parsing fills documented
defaults (gain 1000 ADC/mV, generated id).
"""
from __future__ import annotations

import io
import json
import struct
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

MAGIC = b"ECG1"
DEFAULT_CSV_GAIN = 1000.0
MIN_SAMPLING_RATE_HZ = 50


class FormatError(ValueError):
    """Raised when bytes do not conform to a recording format."""


def _utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class EcgRecording:
    """Multi-lead sampled ECG signal in raw ADC counts.

    ``samples`` has shape [n_leads, n_samples] (int16); millivolt value of
    any sample is ``adc_count / gain_adc_per_mv``.
    """

    id: str
    patient_ref: str
    sampling_rate_hz: int
    leads: tuple[str, ...]
    gain_adc_per_mv: float
    samples: np.ndarray
    start_time: datetime = field(
        default_factory=lambda: datetime(2000, 1, 1, tzinfo=timezone.utc)
    )

    def __post_init__(self):
        if len(self.leads) == 0:
            raise ValueError("no leads")
        if self.sampling_rate_hz < MIN_SAMPLING_RATE_HZ:
            raise ValueError(f"sampling_rate_hz must be >= {MIN_SAMPLING_RATE_HZ}")
        if not self.gain_adc_per_mv > 0:
            raise ValueError("gain must be > 0")
        arr = np.asarray(self.samples, dtype=np.int16)
        if arr.ndim != 2 or arr.shape[0] != len(self.leads):
            raise ValueError("samples must be [n_leads, n_samples]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "leads", tuple(self.leads))
        object.__setattr__(self, "start_time", _utc(self.start_time))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    def lead_index(self, lead: str) -> int:
        try:
            return self.leads.index(lead)
        except ValueError:
            raise KeyError(f"unknown lead: {lead}") from None

    def lead_mv(self, lead: str) -> np.ndarray:
        """One lead converted to millivolts (float64)."""
        return self.samples[self.lead_index(lead)].astype(np.float64) / self.gain_adc_per_mv

    def __eq__(self, other) -> bool:
        if not isinstance(other, EcgRecording):
            return NotImplemented
        return (
            self.id == other.id
            and self.patient_ref == other.patient_ref
            and self.sampling_rate_hz == other.sampling_rate_hz
            and self.leads == other.leads
            and self.gain_adc_per_mv == other.gain_adc_per_mv
            and self.start_time == other.start_time
            and self.samples.shape == other.samples.shape
            and bool(np.array_equal(self.samples, other.samples))
        )


@dataclass(frozen=True)
class SegmentWindow:
    """Fixed-length single-lead slice of a recording, in millivolts."""

    recording_ref: str
    lead: str
    start_sample: int
    samples_mv: np.ndarray
    sampling_rate_hz: int
    origin: str = "real"

    def __post_init__(self):
        arr = np.asarray(self.samples_mv, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("samples_mv must be 1-D")
        object.__setattr__(self, "samples_mv", arr)
        if self.start_sample < 0:
            raise ValueError("start_sample must be >= 0")

    def __len__(self) -> int:
        return len(self.samples_mv)

    @property
    def duration_s(self) -> float:
        return len(self.samples_mv) / self.sampling_rate_hz

    @property
    def end_sample(self) -> int:
        return self.start_sample + len(self.samples_mv)


def mv_to_adc(x_mv: np.ndarray, gain: float) -> np.ndarray:
    """Millivolts back to int16 counts, rounding to nearest."""
    counts = np.rint(np.asarray(x_mv, dtype=np.float64) * gain)
    return np.clip(counts, -32768, 32767).astype(np.int16)


# --- binary-v1 ---------------------------------------------------------------

def _encode_binary(rec: EcgRecording) -> bytes:
    header = {
        "id": rec.id,
        "patient_ref": rec.patient_ref,
        "fs": rec.sampling_rate_hz,
        "leads": list(rec.leads),
        "gain": rec.gain_adc_per_mv,
        "start_time": rec.start_time.isoformat(),
    }
    hbytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    frames = np.ascontiguousarray(rec.samples.T.astype("<i2")).tobytes()
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + frames


def _parse_binary(data: bytes) -> EcgRecording:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("malformed header: bad magic")
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise FormatError("malformed header: truncated header")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"malformed header: {e}") from e
    for key in ("id", "patient_ref", "fs", "leads", "gain", "start_time"):
        if key not in header:
            raise FormatError(f"malformed header: missing {key}")
    leads = [str(x) for x in header["leads"]]
    if len(leads) == 0:
        raise FormatError("no leads")
    gain = float(header["gain"])
    if gain <= 0:
        raise FormatError("gain must be > 0")
    payload = data[8 + hlen :]
    frame_size = 2 * len(leads)
    if len(payload) % frame_size != 0:
        raise FormatError("truncated payload")
    flat = np.frombuffer(payload, dtype="<i2")
    samples = flat.reshape(-1, len(leads)).T
    try:
        start_time = datetime.fromisoformat(header["start_time"])
    except ValueError as e:
        raise FormatError(f"malformed header: bad start_time: {e}") from e
    return EcgRecording(
        id=str(header["id"]),
        patient_ref=str(header["patient_ref"]),
        sampling_rate_hz=int(header["fs"]),
        leads=tuple(leads),
        gain_adc_per_mv=gain,
        samples=samples,
        start_time=start_time,
    )


# --- csv ----------------------------------------------------------------------

def _encode_csv(rec: EcgRecording) -> bytes:
    meta = {
        "id": rec.id,
        "patient_ref": rec.patient_ref,
        "fs": rec.sampling_rate_hz,
        "gain": rec.gain_adc_per_mv,
        "start_time": rec.start_time.isoformat(),
    }
    buf = io.StringIO()
    buf.write(f"# ecgdesk-meta: {json.dumps(meta, separators=(',', ':'))}\n")
    buf.write("t_s," + ",".join(rec.leads) + "\n")
    mv = rec.samples.astype(np.float64) / rec.gain_adc_per_mv
    fs = rec.sampling_rate_hz
    for j in range(rec.n_samples):
        row = [repr(j / fs)] + [repr(float(v)) for v in mv[:, j]]
        buf.write(",".join(row) + "\n")
    return buf.getvalue().encode("utf-8")


def _parse_csv(data: bytes) -> EcgRecording:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"malformed header: {e}") from e
    lines = [ln for ln in text.splitlines() if ln.strip()]
    meta: dict = {}
    if lines and lines[0].startswith("#"):
        comment = lines.pop(0)
        marker = "ecgdesk-meta:"
        if marker in comment:
            try:
                meta = json.loads(comment.split(marker, 1)[1])
            except json.JSONDecodeError as e:
                raise FormatError(f"malformed header: {e}") from e
    if not lines:
        raise FormatError("malformed header: empty csv")
    cols = lines.pop(0).split(",")
    if len(cols) < 2 or cols[0].strip() != "t_s":
        raise FormatError("malformed header: expected t_s,<lead>... column row")
    leads = [c.strip() for c in cols[1:]]
    if not lines:
        raise FormatError("truncated payload")
    rows = []
    for ln in lines:
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise FormatError("truncated payload")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as e:
            raise FormatError(f"truncated payload: {e}") from e
    arr = np.asarray(rows, dtype=np.float64)
    t = arr[:, 0]
    if "fs" in meta:
        fs = int(meta["fs"])
    else:
        if len(t) < 2:
            raise FormatError("malformed header: cannot infer sampling rate")
        fs = int(round(1.0 / float(np.median(np.diff(t)))))
    gain = float(meta.get("gain", DEFAULT_CSV_GAIN))
    if gain <= 0:
        raise FormatError("gain must be > 0")
    start_time = (
        datetime.fromisoformat(meta["start_time"])
        if "start_time" in meta
        else datetime(2000, 1, 1, tzinfo=timezone.utc)
    )
    return EcgRecording(
        id=str(meta.get("id", uuid.uuid4().hex)),
        patient_ref=str(meta.get("patient_ref", "")),
        sampling_rate_hz=fs,
        leads=tuple(leads),
        gain_adc_per_mv=gain,
        samples=mv_to_adc(arr[:, 1:].T, gain),
        start_time=start_time,
    )


# --- public ops ---------------------------------------------------------------

def parse_recording(data: bytes, fmt: str = "binary-v1") -> EcgRecording:
    """Parse bytes in one of the documented formats into a recording."""
    if fmt == "binary-v1":
        return _parse_binary(data)
    if fmt == "csv":
        return _parse_csv(data)
    raise FormatError(f"unknown format tag: {fmt}")


def encode_recording(rec: EcgRecording, fmt: str = "binary-v1") -> bytes:
    """Encode a recording; ``parse_recording(encode_recording(rec))`` is identity."""
    if fmt == "binary-v1":
        return _encode_binary(rec)
    if fmt == "csv":
        return _encode_csv(rec)
    raise FormatError(f"unknown format tag: {fmt}")


def window_segments(
    rec: EcgRecording, lead: str, window_s: float, stride_s: float
) -> list[SegmentWindow]:
    """Sliding windows over one lead, in millivolts.

    Returns ``floor((duration - window_s) / stride_s) + 1`` windows; an empty
    list if the recording is shorter than one window. Trailing partial
    windows are dropped.
    """
    if window_s <= 0 or stride_s <= 0:
        raise ValueError("window and stride must be positive")
    idx = rec.lead_index(lead)
    fs = rec.sampling_rate_hz
    win = int(round(window_s * fs))
    stride = int(round(stride_s * fs))
    n = rec.n_samples
    if win > n:
        return []
    mv = rec.samples[idx].astype(np.float64) / rec.gain_adc_per_mv
    out = []
    for start in range(0, n - win + 1, stride):
        out.append(
            SegmentWindow(
                recording_ref=rec.id,
                lead=lead,
                start_sample=start,
                samples_mv=mv[start : start + win],
                sampling_rate_hz=fs,
            )
        )
    return out
