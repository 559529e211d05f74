"""GAN-based minority-class synthesis and embedding-driven dataset curation.

The generator and discriminator are small dense stacks trained with the
non-saturating GAN loss on z-normalised segments. The curation embedding is
a PCA-initialized neighbor embedding: deterministic per seed, attracting
k-nearest-neighbor pairs and repelling sampled non-neighbors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ecgdesk.dsp import znormalize
from ecgdesk.nn.checkpoint import ModelCheckpoint
from ecgdesk.nn.layers import softmax
from ecgdesk.nn.model import Model, build_mlp, model_from_checkpoint
from ecgdesk.nn.optim import AdamWHyper, AdamWState, adamw_step
from ecgdesk.signal_io.recording import SegmentWindow

LOW_CONFIDENCE_THRESHOLD = 0.6
SYNTH_CAP_FACTOR = 3
MIN_REAL_SEGMENTS = 32


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 32
    gen_hidden: tuple[int, ...] = (64, 128)
    disc_hidden: tuple[int, ...] = (64, 16)
    steps: int = 1500
    batch_size: int = 32
    gen_lr: float = 5e-4
    disc_lr: float = 2.5e-4
    gen_updates: int = 1  # generator steps per discriminator step
    instance_noise: float = 0.0  # optional, decays over training
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1 or self.steps < 1:
            raise ValueError("latent_dim and steps must be positive")


@dataclass(frozen=True)
class EmbeddingPoint:
    segment_ref: str
    x: float
    y: float
    label: str = ""
    confidence: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError("coordinates must be finite")


@dataclass(frozen=True)
class LabelCorrection:
    segment_ref: str
    old_label: str
    new_label: str
    curator_id: str
    timestamp: str

    def __post_init__(self):
        if self.old_label == self.new_label:
            raise ValueError("old label must differ from new label")


@dataclass
class LabeledDataset:
    """Segments keyed by ref with labels; corrections keep the old label in history."""

    segments: dict[str, SegmentWindow]
    labels: dict[str, str]
    class_set: tuple[str, ...]
    history: list[LabelCorrection] = field(default_factory=list)


@dataclass
class GanTrace:
    gen_losses: list[float] = field(default_factory=list)
    disc_losses: list[float] = field(default_factory=list)


def _bce_from_logits(logits: np.ndarray, target_real: bool) -> tuple[float, np.ndarray]:
    """Two-class softmax BCE; class 1 = real. Returns loss and dlogits."""
    p = softmax(logits.astype(np.float64), axis=-1)
    n = len(logits)
    t = 1 if target_real else 0
    p_t = np.clip(p[:, t], 1e-12, 1.0)
    loss = float(np.mean(-np.log(p_t)))
    dz = p.copy()
    dz[:, t] -= 1.0
    return loss, (dz / n).astype(logits.dtype)


def train_gan(
    real: list[SegmentWindow] | np.ndarray, cfg: GanConfig
) -> tuple[ModelCheckpoint, GanTrace]:
    """Adversarial training on one class's segments; deterministic per seed."""
    if isinstance(real, np.ndarray):
        mat = real.astype(np.float64)
    else:
        lengths = {len(w) for w in real}
        if len(lengths) > 1:
            raise ValueError("segments must have uniform length")
        mat = np.stack([w.samples_mv for w in real])
    if len(mat) < MIN_REAL_SEGMENTS:
        raise ValueError(f"need at least {MIN_REAL_SEGMENTS} real segments")
    seg_len = mat.shape[1]
    data = np.stack([znormalize(row) for row in mat]).astype(np.float32)

    rng = np.random.default_rng(cfg.seed)
    gen_dims = [cfg.latent_dim, *cfg.gen_hidden, seg_len]
    disc_dims = [seg_len, *cfg.disc_hidden, 2]
    gen = build_mlp(gen_dims, out="linear", seed=cfg.seed)
    disc = build_mlp(disc_dims, out="linear", seed=cfg.seed + 1)
    final = f"fc{len(gen_dims) - 2}"
    g_state = AdamWState.init(gen.params, AdamWHyper(lr=cfg.gen_lr, beta1=0.5))
    d_state = AdamWState.init(disc.params, AdamWHyper(lr=cfg.disc_lr, beta1=0.5))
    trace = GanTrace()

    for step in range(cfg.steps):
        # optional decaying instance noise (off by default; amplitude growth
        # from small init is a gentler stabiliser and preserves shape better)
        sigma = cfg.instance_noise * max(1.0 - step / (0.8 * cfg.steps), 0.0)
        if sigma > 0:
            noise = lambda: rng.normal(0.0, sigma, (cfg.batch_size, seg_len)).astype(np.float32)
        else:
            noise = lambda: 0.0

        idx = rng.integers(0, len(data), size=cfg.batch_size)
        z = rng.standard_normal((cfg.batch_size, cfg.latent_dim)).astype(np.float32)
        fake, _ = gen.forward(z)
        logits_r, caches_r = disc.forward(data[idx] + noise())
        loss_r, dz_r = _bce_from_logits(logits_r, target_real=True)
        _, grads_r = disc.backward(dz_r, caches_r)
        logits_f, caches_f = disc.forward(fake + noise())
        loss_f, dz_f = _bce_from_logits(logits_f, target_real=False)
        _, grads_f = disc.backward(dz_f, caches_f)
        grads = {k: grads_r[k] + grads_f[k] for k in grads_r}
        disc.params, d_state = adamw_step(disc.params, grads, d_state)
        trace.disc_losses.append(loss_r + loss_f)

        # non-saturating generator updates: push fakes toward "real"
        g_loss = 0.0
        for _ in range(cfg.gen_updates):
            z = rng.standard_normal((cfg.batch_size, cfg.latent_dim)).astype(np.float32)
            fake, g_caches = gen.forward(z)
            logits_f, caches_f = disc.forward(fake + noise())
            g_loss, dz = _bce_from_logits(logits_f, target_real=True)
            dfake, _ = disc.backward(dz, caches_f)
            _, g_grads = gen.backward(dfake, g_caches)
            gen.params, g_state = adamw_step(gen.params, g_grads, g_state)
        trace.gen_losses.append(g_loss)

    # deterministic post-training calibration: affine-correct the output layer
    # so the generated population's first two moments match the real set
    z = rng.standard_normal((256, cfg.latent_dim)).astype(np.float32)
    probe, _ = gen.forward(z)
    c = float(data.std() / max(probe.std(), 1e-6))
    d = float(data.mean() - c * probe.mean())
    gen.params[f"{final}/w"] = (gen.params[f"{final}/w"] * c).astype(np.float32)
    gen.params[f"{final}/b"] = (gen.params[f"{final}/b"] * c + d).astype(np.float32)

    ckpt = ModelCheckpoint(
        model_id="gan",
        version="1.0.0",
        config={"kind": "mlp", "dims": gen_dims, "out": "linear", "latent_dim": cfg.latent_dim},
        weights=dict(gen.params),
    )
    return ckpt, trace


def generate_synthetic(
    gen_ckpt: ModelCheckpoint, n: int, seed: int, fs: int = 250
) -> list[SegmentWindow]:
    """Sample n synthetic segments, tagged synthetic-origin; deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = gen_ckpt.config
    latent = int(cfg["latent_dim"])
    gen = model_from_checkpoint(gen_ckpt)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, latent)).astype(np.float32)
    out, _ = gen.forward(z)
    segments = []
    for i, row in enumerate(out):
        segments.append(
            SegmentWindow(
                recording_ref=f"gan:{gen_ckpt.content_hash[:12]}:{seed}:{i}",
                lead="II",
                start_sample=0,
                samples_mv=row.astype(np.float64),
                sampling_rate_hz=fs,
                origin="synthetic",
            )
        )
    return segments


def synthetic_cap(n_real_minority: int) -> int:
    """Synthetic samples admitted into training: at most 3x the real count."""
    return SYNTH_CAP_FACTOR * n_real_minority


# --- embedding ----------------------------------------------------------------

def _pca_2d(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:2]
    # deterministic sign: largest-magnitude loading is positive
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return xc @ comps.T


def embed_segments(
    segments: list[SegmentWindow] | np.ndarray,
    seed: int = 0,
    n_neighbors: int = 10,
    n_iter: int = 120,
    refs: list[str] | None = None,
    labels: list[str] | None = None,
    confidences: list[float] | None = None,
) -> list[EmbeddingPoint]:
    """Deterministic 2-D neighbor embedding of segments.

    PCA initialization followed by iterations that pull k-nearest neighbors
    together and push sampled non-neighbors apart. Identical segments map to
    identical points.
    """
    if isinstance(segments, np.ndarray):
        mat = segments.astype(np.float64)
        seg_refs = refs or [f"seg-{i}" for i in range(len(mat))]
    else:
        mat = np.stack([w.samples_mv for w in segments])
        seg_refs = refs or [f"{w.recording_ref}:{w.start_sample}" for w in segments]
    n = len(mat)
    if n < 3:
        raise ValueError("need at least 3 segments")

    # deduplicate so identical segments share one embedded point
    keys = [row.tobytes() for row in mat]
    uniq: dict[bytes, int] = {}
    owner = np.empty(n, dtype=np.int64)
    for i, k in enumerate(keys):
        owner[i] = uniq.setdefault(k, len(uniq))
    umat = np.empty((len(uniq), mat.shape[1]))
    for k, j in uniq.items():
        umat[j] = np.frombuffer(k, dtype=np.float64)

    m = len(umat)
    y = _pca_2d(umat)
    scale = np.abs(y).max()
    if scale > 0:
        y = y / scale * 10.0
    if m > 2:
        k_eff = min(n_neighbors, m - 1)
        sq = (umat * umat).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (umat @ umat.T)
        np.fill_diagonal(d2, np.inf)
        nbrs = np.argsort(d2, axis=1)[:, :k_eff]
        rng = np.random.default_rng(seed)
        lr = 0.3
        for it in range(n_iter):
            grad = np.zeros_like(y)
            diff = y[:, None, :] - y[nbrs]  # [m, k, 2]
            grad += diff.sum(axis=1) * 0.05
            far = rng.integers(0, m, size=(m, k_eff))
            fdiff = y[:, None, :] - y[far]
            fd2 = (fdiff**2).sum(-1, keepdims=True) + 0.1
            grad -= (fdiff / fd2).sum(axis=1) * 0.02
            y -= lr * grad
            lr *= 0.99

    points = []
    for i in range(n):
        yy = y[owner[i]]
        points.append(
            EmbeddingPoint(
                segment_ref=seg_refs[i],
                x=float(yy[0]),
                y=float(yy[1]),
                label=labels[i] if labels else "",
                confidence=float(confidences[i]) if confidences else 1.0,
            )
        )
    return points


# --- curation bundle ------------------------------------------------------------

def export_curation_bundle(
    points: list[EmbeddingPoint],
    predictions: dict[str, dict],
    threshold: float = LOW_CONFIDENCE_THRESHOLD,
) -> dict:
    """Bundle embedding points with predicted labels/confidences and flags.

    ``predictions`` maps segment_ref -> {"label": str, "confidence": float}.
    """
    point_refs = {p.segment_ref for p in points}
    if point_refs != set(predictions):
        raise ValueError("key mismatch between points and predictions")
    rows = []
    for p in sorted(points, key=lambda q: q.segment_ref):
        pred = predictions[p.segment_ref]
        conf = float(pred["confidence"])
        rows.append(
            {
                "segment_ref": p.segment_ref,
                "x": round(p.x, 6),
                "y": round(p.y, 6),
                "label": pred["label"],
                "confidence": round(conf, 6),
                "low_confidence": conf < threshold,
            }
        )
    return {"schema_version": 1, "threshold": threshold, "points": rows}


def bundle_to_json(bundle: dict) -> str:
    return json.dumps(bundle, indent=2, sort_keys=True)


def bundle_from_json(text: str) -> dict:
    bundle = json.loads(text)
    for key in ("schema_version", "threshold", "points"):
        if key not in bundle:
            raise ValueError(f"malformed bundle: missing {key}")
    return bundle


def apply_corrections(
    dataset: LabeledDataset,
    corrections: list[LabelCorrection],
    audit_hook=None,
) -> LabeledDataset:
    """New dataset with corrected labels; originals retained in history."""
    labels = dict(dataset.labels)
    history = list(dataset.history)
    for c in corrections:
        if c.segment_ref not in labels:
            raise KeyError(f"unknown segment_ref: {c.segment_ref}")
        if c.new_label not in dataset.class_set:
            raise ValueError(f"label outside class set: {c.new_label}")
        if labels[c.segment_ref] != c.old_label:
            raise ValueError(
                f"stale correction for {c.segment_ref}: "
                f"label is {labels[c.segment_ref]}, not {c.old_label}"
            )
        labels[c.segment_ref] = c.new_label
        history.append(c)
        if audit_hook is not None:
            audit_hook(c)
    return LabeledDataset(
        segments=dataset.segments,
        labels=labels,
        class_set=dataset.class_set,
        history=history,
    )
