"""Training entry point used by the CLI: data directory -> registered checkpoint.

The data directory holds recordings (*.ecg1) with sibling ground-truth
files (<stem>.truth.json), the layout ``synth --truth-out`` produces.
"""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from ecgdesk.classify import BEAT_CLASSES, RHYTHM_CLASSES
from ecgdesk.datasets import (
    harvest_beats,
    harvest_delineation,
    harvest_quality,
    harvest_rhythm,
)
from ecgdesk.dsp import FilterSpec, bandpass_filter
from ecgdesk.fiducials import FiducialSet
from ecgdesk.nn.checkpoint import CheckpointRegistry, parse_semver
from ecgdesk.signal_io.recording import parse_recording
from ecgdesk.signal_io.synth import GroundTruth
from ecgdesk.training import (
    TrainConfig,
    beat_model_config,
    delineation_model_config,
    quality_model_config,
    rhythm_model_config,
    to_checkpoint,
    train_classifier,
    train_delineator,
)


def truth_from_dict(d: dict) -> GroundTruth:
    fiducials = tuple(
        FiducialSet(
            qrs_on=b["qrs_on"],
            qrs_off=b["qrs_off"],
            p_on=b.get("p_on"),
            p_off=b.get("p_off"),
            t_on=b.get("t_on"),
            t_off=b.get("t_off"),
        )
        for b in d["fiducials"]
    )
    return GroundTruth(
        fiducials=fiducials,
        beat_labels=tuple(d["beat_labels"]),
        rhythm_spans=tuple((s, e, c) for s, e, c in d["rhythm_spans"]),
        noise_spans=tuple((s, e) for s, e in d["noise_spans"]),
    )


def _load_pairs(data_dir: Path, lead: str, filter_spec: FilterSpec):
    pairs = []
    for rec_path in sorted(data_dir.glob("*.ecg1")):
        truth_path = rec_path.parent / (rec_path.stem + ".truth.json")
        if not truth_path.exists():
            continue
        rec = parse_recording(rec_path.read_bytes(), "binary-v1")
        truth = truth_from_dict(json.loads(truth_path.read_text()))
        x = bandpass_filter(rec.lead_mv(lead), rec.sampling_rate_hz, filter_spec)
        pairs.append((rec, truth, x))
    if not pairs:
        raise FileNotFoundError(f"no (.ecg1, .truth.json) pairs under {data_dir}")
    return pairs


def _next_version(registry: CheckpointRegistry, model_id: str) -> str:
    latest = registry.latest_version(model_id)
    if latest is None:
        return "1.0.0"
    major, minor, patch = parse_semver(latest)
    return f"{major}.{minor}.{patch + 1}"


def train_from_directory(
    model_id: str,
    data_dir: Path,
    registry_dir: Path,
    config_path: Path | None = None,
    seed: int = 0,
    version: str | None = None,
    lead: str = "II",
    echo=print,
) -> Path:
    overrides = json.loads(config_path.read_text()) if config_path else {}
    train_cfg = TrainConfig(seed=seed, **overrides.get("train", {}))
    filter_spec = FilterSpec.from_dict(overrides.get("filter", {}))
    pairs = _load_pairs(Path(data_dir), lead, filter_spec)

    xs, ys = [], []
    for rec, truth, x in pairs:
        fs = rec.sampling_rate_hz
        if model_id == "rhythm":
            hx, hy = harvest_rhythm(truth, x, fs)
        elif model_id == "delineation":
            hx, hy = harvest_delineation(truth, x, fs)
        elif model_id == "quality":
            hx, hy = harvest_quality(truth, x, fs)
        elif model_id == "beat":
            hx, hy = harvest_beats(truth, x, fs)
        else:
            raise ValueError(f"unknown model id: {model_id}")
        xs.extend(hx)
        ys.extend(hy)
    x_arr = np.stack(xs)
    echo(f"{model_id}: {len(x_arr)} training windows from {len(pairs)} recording(s)")

    input_len = x_arr.shape[1]
    if model_id == "rhythm":
        model_cfg = rhythm_model_config(input_len=input_len)
        model, hist = train_classifier(model_cfg, x_arr, np.asarray(ys), RHYTHM_CLASSES, train_cfg)
    elif model_id == "beat":
        model_cfg = beat_model_config(input_len=input_len)
        model, hist = train_classifier(model_cfg, x_arr, np.asarray(ys), BEAT_CLASSES, train_cfg)
    elif model_id == "quality":
        model_cfg = quality_model_config(input_len=input_len)
        model, hist = train_classifier(model_cfg, x_arr, np.asarray(ys), ("Clean", "Noisy"), train_cfg)
    else:
        model_cfg = delineation_model_config(input_len=input_len)
        model, hist = train_delineator(model_cfg, x_arr, np.stack(ys), train_cfg)
    echo(f"trained in {hist.wall_time_s:.1f}s; final loss {hist.losses[-1]:.4f}")

    registry = CheckpointRegistry(registry_dir)
    ckpt = to_checkpoint(model, model_id, version or _next_version(registry, model_id))
    return registry.register(ckpt)
