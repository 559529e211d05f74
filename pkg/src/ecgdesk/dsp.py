"""Deterministic signal conditioning: band filtering, resampling, z-normalization.

Filters are causal (forward pass only, cascaded second-order sections) so
the same code path works for streaming use. Resampling is linear
interpolation, adequate for band-limited desk-scale signals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

ZNORM_EPS = 1e-8


@dataclass(frozen=True)
class FilterSpec:
    low_cut_hz: float = 0.5
    high_cut_hz: float = 40.0
    notch_hz: float | None = 50.0
    order: int = 4

    def __post_init__(self):
        if self.low_cut_hz < 0:
            raise ValueError("low_cut_hz must be >= 0")
        if self.high_cut_hz <= self.low_cut_hz:
            raise ValueError("high_cut_hz must exceed low_cut_hz")
        if self.order < 1:
            raise ValueError("order must be >= 1")

    def validate_for(self, fs: float) -> None:
        if self.high_cut_hz >= fs / 2:
            raise ValueError(f"high_cut_hz {self.high_cut_hz} not below Nyquist for fs={fs}")
        if self.notch_hz is not None and self.notch_hz >= fs / 2:
            raise ValueError(f"notch_hz {self.notch_hz} not below Nyquist for fs={fs}")

    def to_dict(self) -> dict:
        return {
            "low_cut_hz": self.low_cut_hz,
            "high_cut_hz": self.high_cut_hz,
            "notch_hz": self.notch_hz,
            "order": self.order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterSpec":
        return cls(
            low_cut_hz=float(d.get("low_cut_hz", 0.5)),
            high_cut_hz=float(d.get("high_cut_hz", 40.0)),
            notch_hz=None if d.get("notch_hz") is None else float(d["notch_hz"]),
            order=int(d.get("order", 4)),
        )


def _design_sos(spec: FilterSpec, fs: float) -> np.ndarray:
    spec.validate_for(fs)
    if spec.low_cut_hz > 0:
        sos = sps.butter(
            spec.order, [spec.low_cut_hz, spec.high_cut_hz], btype="bandpass", fs=fs, output="sos"
        )
    else:
        sos = sps.butter(spec.order, spec.high_cut_hz, btype="lowpass", fs=fs, output="sos")
    if spec.notch_hz is not None:
        b, a = sps.iirnotch(spec.notch_hz, Q=30.0, fs=fs)
        sos = np.vstack([sos, sps.tf2sos(b, a)])
    return sos


def bandpass_filter(x: np.ndarray, fs: float, spec: FilterSpec | None = None) -> np.ndarray:
    """Causal band-pass (plus optional power-line notch); output length = input length."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    if spec is None:
        spec = FilterSpec()
    sos = _design_sos(spec, fs)
    return sps.sosfilt(sos, x)


def resample(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    """Linear-interpolation resampling; length = round(len(x) * fs_out / fs_in)."""
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError("sampling rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    if fs_in == fs_out:
        return x.copy()
    n_out = int(round(len(x) * fs_out / fs_in))
    positions = np.arange(n_out) * (fs_in / fs_out)
    return np.interp(positions, np.arange(len(x)), x)


def znormalize(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance (population std); all zeros if std < 1e-8."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    mu = x.mean()
    sd = x.std()
    if sd < ZNORM_EPS:
        return np.zeros_like(x)
    return (x - mu) / sd
