"""Wave-label and fiducial types shared by the synthesizer and delineator."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum


class WaveLabel(IntEnum):
    ISO = 0
    P = 1
    QRS = 2
    T = 3


@dataclass(frozen=True)
class FiducialSet:
    """Per-beat wave onsets/offsets (sample indices); P and T may be absent.

    Offsets are half-open: ``off`` is the first index after the wave.
    """

    qrs_on: int
    qrs_off: int
    p_on: int | None = None
    p_off: int | None = None
    t_on: int | None = None
    t_off: int | None = None

    def __post_init__(self):
        if not self.qrs_on < self.qrs_off:
            raise ValueError("qrs_on must be < qrs_off")
        if (self.p_on is None) != (self.p_off is None):
            raise ValueError("p_on and p_off must both be set or both absent")
        if (self.t_on is None) != (self.t_off is None):
            raise ValueError("t_on and t_off must both be set or both absent")
        if self.p_on is not None and not (self.p_on < self.p_off <= self.qrs_on):
            raise ValueError("require p_on < p_off <= qrs_on")
        if self.t_on is not None and not (self.qrs_off <= self.t_on < self.t_off):
            raise ValueError("require qrs_off <= t_on < t_off")

    def shifted(self, offset: int) -> "FiducialSet":
        """Same beat with all indices translated by ``offset``."""
        opt = lambda v: None if v is None else v + offset
        return FiducialSet(
            qrs_on=self.qrs_on + offset,
            qrs_off=self.qrs_off + offset,
            p_on=opt(self.p_on),
            p_off=opt(self.p_off),
            t_on=opt(self.t_on),
            t_off=opt(self.t_off),
        )

    def boundaries(self) -> dict[str, int]:
        """Defined boundaries keyed by name (p_on .. t_off)."""
        out = {"qrs_on": self.qrs_on, "qrs_off": self.qrs_off}
        if self.p_on is not None:
            out["p_on"] = self.p_on
            out["p_off"] = self.p_off
        if self.t_on is not None:
            out["t_on"] = self.t_on
            out["t_off"] = self.t_off
        return out


@dataclass(frozen=True)
class IntervalMeasurement:
    """Derived durations for one beat, in milliseconds."""

    pr_ms: float | None = None
    qrs_ms: float | None = None
    qt_ms: float | None = None
    rr_ms: float | None = None
    heart_rate_bpm: float | None = None

    def to_dict(self) -> dict:
        rnd = lambda v: None if v is None else round(v, 3)
        return {
            "pr_ms": rnd(self.pr_ms),
            "qrs_ms": rnd(self.qrs_ms),
            "qt_ms": rnd(self.qt_ms),
            "rr_ms": rnd(self.rr_ms),
            "heart_rate_bpm": rnd(self.heart_rate_bpm),
        }
