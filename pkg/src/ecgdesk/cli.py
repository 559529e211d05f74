"""Command-line interface: synth, train, analyze, evaluate, curate, serve."""
from __future__ import annotations

import json
import os
from pathlib import Path

import click
import numpy as np

from ecgdesk.signal_io.recording import encode_recording, parse_recording
from ecgdesk.signal_io.synth import SynthSpec, synthesize_recording


def _truth_to_dict(truth) -> dict:
    return {
        "fiducials": [f.boundaries() for f in truth.fiducials],
        "beat_labels": list(truth.beat_labels),
        "rhythm_spans": [[s, e, c] for s, e, c in truth.rhythm_spans],
        "noise_spans": [[s, e] for s, e in truth.noise_spans],
    }


@click.group()
def main():
    """Desk-scale ambulatory ECG analysis toolkit."""


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), required=True, help="SynthSpec JSON")
@click.option("--seed", type=int, default=None, help="Override the spec seed")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--format", "fmt", type=click.Choice(["binary-v1", "csv"]), default="binary-v1")
@click.option("--truth-out", type=click.Path(), default=None, help="Write ground truth JSON")
def synth(spec_path, seed, out_path, fmt, truth_out):
    """Generate a synthetic recording from a script."""
    spec = SynthSpec.from_json(Path(spec_path).read_text())
    if seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=seed)
    rec, truth = synthesize_recording(spec)
    Path(out_path).write_bytes(encode_recording(rec, fmt))
    if truth_out:
        Path(truth_out).write_text(json.dumps(_truth_to_dict(truth), indent=2))
    click.echo(
        f"wrote {out_path}: {rec.duration_s:.1f}s @{rec.sampling_rate_hz}Hz, "
        f"{len(truth.fiducials)} beats"
    )


@main.command()
@click.option("--model", "model_id", type=click.Choice(["delineation", "beat", "rhythm", "quality"]), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True,
              help="Directory of .ecg1 recordings with matching .truth.json files")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON with model/training overrides")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Checkpoint registry directory")
@click.option("--version", default=None, help="Semantic version (default: next patch)")
def train(model_id, data_dir, config_path, seed, out_dir, version):
    """Train one model head on a directory of synthetic recordings."""
    from ecgdesk.cli_train import train_from_directory

    path = train_from_directory(
        model_id=model_id,
        data_dir=Path(data_dir),
        registry_dir=Path(out_dir),
        config_path=Path(config_path) if config_path else None,
        seed=seed,
        version=version,
        echo=click.echo,
    )
    click.echo(f"registered {path}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--lead", default="II")
@click.option("--models", "model_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--workers", type=int, default=1)
@click.option("--figures", "figures_dir", type=click.Path(), default=None,
              help="Also render a trace summary figure here")
def analyze(in_path, lead, model_dir, out_path, workers, figures_dir):
    """Run the full pipeline on one recording file."""
    from dataclasses import replace as dc_replace

    from ecgdesk.dsp import bandpass_filter
    from ecgdesk.nn.checkpoint import CheckpointRegistry
    from ecgdesk.pipeline import AnalysisConfig, analyze_recording

    data = Path(in_path).read_bytes()
    fmt = "csv" if in_path.endswith(".csv") else "binary-v1"
    rec = parse_recording(data, fmt)
    cfg = AnalysisConfig(n_workers=workers)
    result = analyze_recording(rec, lead, CheckpointRegistry(model_dir), cfg)
    Path(out_path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    s = result.summary
    click.echo(
        f"dominant {s.dominant_rhythm}; {len(s.episodes)} episode(s); "
        f"{s.windows_analyzed} windows analyzed, {s.windows_excluded} excluded; "
        f"{result.wall_time_ms:.0f} ms"
    )
    if figures_dir:
        from ecgdesk.report import analysis_figure

        Path(figures_dir).mkdir(parents=True, exist_ok=True)
        x = bandpass_filter(rec.lead_mv(lead), rec.sampling_rate_hz, cfg.filter_spec)
        fig_path = Path(figures_dir) / (Path(out_path).stem + "_trace.png")
        analysis_figure(result.to_dict(), x, rec.sampling_rate_hz, fig_path)
        click.echo(f"figure: {fig_path}")


def _read_labels(path: str) -> list[str]:
    text = Path(path).read_text().strip()
    if text.startswith("["):
        return [str(v) for v in json.loads(text)]
    return [line.strip() for line in text.splitlines() if line.strip()]


@main.command()
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--classes", required=True,
              help="'beat', 'rhythm', 'quality', or a comma-separated class list")
@click.option("--out-json", type=click.Path(), default=None)
@click.option("--out-csv", type=click.Path(), default=None)
@click.option("--figures", "figures_dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, help="Bootstrap resampling seed")
def evaluate(pred_path, truth_path, classes, out_json, out_csv, figures_dir, seed):
    """Per-class metric report with 95% CIs (Wilson + bootstrap F1)."""
    from ecgdesk.classify import BEAT_CLASSES, RHYTHM_CLASSES
    from ecgdesk.report import confusion_matrix_figure, evaluation_report, report_to_table, save_report

    named = {"beat": BEAT_CLASSES, "rhythm": RHYTHM_CLASSES, "quality": ("Clean", "Noisy")}
    class_set = named.get(classes, tuple(c.strip() for c in classes.split(",") if c.strip()))
    truth = _read_labels(truth_path)
    pred = _read_labels(pred_path)
    report = evaluation_report(truth, pred, class_set, seed=seed)
    click.echo(report_to_table(report))
    if out_json or out_csv:
        save_report(report, Path(out_json or "report.json"), Path(out_csv) if out_csv else None)
    if figures_dir:
        Path(figures_dir).mkdir(parents=True, exist_ok=True)
        path = confusion_matrix_figure(report, Path(figures_dir) / "confusion_matrix.png")
        click.echo(f"figure: {path}")


@main.group()
def curate():
    """Dataset curation: embeddings and label corrections."""


@curate.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True,
              help="npz with arrays x [N,L]; optional refs, labels, confidences")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--figure", "figure_path", type=click.Path(), default=None)
def embed(in_path, out_path, seed, figure_path):
    """Embed segments into 2-D and export the curation bundle."""
    from ecgdesk.augment import bundle_to_json, embed_segments, export_curation_bundle
    from ecgdesk.report import embedding_figure

    archive = np.load(in_path, allow_pickle=False)
    x = archive["x"]
    refs = [str(r) for r in archive["refs"]] if "refs" in archive else None
    labels = [str(v) for v in archive["labels"]] if "labels" in archive else None
    confs = archive["confidences"].tolist() if "confidences" in archive else None
    points = embed_segments(x, seed=seed, refs=refs, labels=labels, confidences=confs)
    predictions = {
        p.segment_ref: {"label": p.label, "confidence": p.confidence} for p in points
    }
    bundle = export_curation_bundle(points, predictions)
    Path(out_path).write_text(bundle_to_json(bundle))
    click.echo(f"embedded {len(points)} segments -> {out_path}")
    if figure_path:
        embedding_figure(points, Path(figure_path))
        click.echo(f"figure: {figure_path}")


@curate.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True,
              help="JSON list of corrections")
@click.option("--labels", "labels_path", type=click.Path(exists=True), required=True,
              help="Labels file: {class_set, labels: {ref: label}, history: []}")
@click.option("--out", "out_path", type=click.Path(), default=None)
def apply(bundle_path, labels_path, out_path):
    """Apply label corrections; originals are kept in history."""
    corrections = json.loads(Path(bundle_path).read_text())
    doc = json.loads(Path(labels_path).read_text())
    class_set = tuple(doc["class_set"])
    labels = dict(doc["labels"])
    history = list(doc.get("history", []))
    for c in corrections:
        ref = c["segment_ref"]
        if ref not in labels:
            raise click.ClickException(f"unknown segment_ref: {ref}")
        if c["new_label"] not in class_set:
            raise click.ClickException(f"label outside class set: {c['new_label']}")
        if c["old_label"] == c["new_label"]:
            raise click.ClickException("old label must differ from new label")
        if labels[ref] != c["old_label"]:
            raise click.ClickException(f"stale correction for {ref}")
        labels[ref] = c["new_label"]
        history.append(c)
    doc = {"class_set": list(class_set), "labels": labels, "history": history}
    Path(out_path or labels_path).write_text(json.dumps(doc, indent=2, sort_keys=True))
    click.echo(f"applied {len(corrections)} correction(s)")


@main.command()
@click.option("--port", type=int, default=None)
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--models", "model_dir", type=click.Path(), default=None)
@click.option("--ui", "ui_dir", type=click.Path(), default=None, help="Static UI bundle to serve at /ui")
@click.option("--job-workers", type=int, default=2)
def serve(port, data_dir, model_dir, ui_dir, job_workers):
    """Run the clinician-review REST service."""
    import uvicorn

    from ecgdesk.platform.app import create_app
    from ecgdesk.platform.service import PlatformConfig

    port = port or int(os.environ.get("PORT", "8000"))
    data_dir = data_dir or os.environ.get("DATA_DIR", "./platform-data")
    model_dir = model_dir or os.environ.get("MODEL_DIR")
    secret = os.environ.get("TOKEN_SECRET", "dev-secret")
    config = PlatformConfig(
        data_dir=Path(data_dir),
        token_secret=secret,
        model_dir=Path(model_dir) if model_dir else None,
        job_mode="pool",
        job_workers=job_workers,
    )
    app = create_app(config, ui_dir=Path(ui_dir) if ui_dir else None)
    uvicorn.run(app, host="127.0.0.1", port=port)


@main.group()
def users():
    """User provisioning (local identity stub)."""


@users.command("add")
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--user", "user_id", required=True)
@click.option("--role", type=click.Choice(["admin", "org_manager", "clinician", "trial_coordinator"]), required=True)
@click.option("--org", required=True)
def users_add(data_dir, user_id, role, org):
    """Create a user and print their bearer token (shown once)."""
    from ecgdesk.platform.service import PlatformConfig, PlatformService

    secret = os.environ.get("TOKEN_SECRET", "dev-secret")
    service = PlatformService(PlatformConfig(data_dir=Path(data_dir), token_secret=secret))
    token = service.add_user(user_id, role, org)
    click.echo(token)


if __name__ == "__main__":
    main()
