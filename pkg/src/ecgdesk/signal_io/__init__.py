"""Recording parsing/encoding, windowing, and synthetic recording generation."""

from ecgdesk.signal_io.recording import (
    EcgRecording,
    FormatError,
    SegmentWindow,
    encode_recording,
    parse_recording,
    window_segments,
)
from ecgdesk.signal_io.synth import (
    GroundTruth,
    NoiseSpan,
    RhythmSpan,
    SynthSpec,
    synthesize_recording,
)

__all__ = [
    "EcgRecording",
    "SegmentWindow",
    "FormatError",
    "parse_recording",
    "encode_recording",
    "window_segments",
    "SynthSpec",
    "RhythmSpan",
    "NoiseSpan",
    "GroundTruth",
    "synthesize_recording",
]
