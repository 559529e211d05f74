"""Training loops for the classifier and delineation heads.

Deterministic per seed: shuffling, init, and dropout all derive from one
generator. Class weights default to inverse frequency (capped) so rare
classes keep gradient signal even before focal weighting.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ecgdesk.dsp import znormalize
from ecgdesk.nn.checkpoint import ModelCheckpoint
from ecgdesk.nn.loss import FocalLossConfig
from ecgdesk.nn.model import Model, ModelConfig, build_model, grad_of_loss
from ecgdesk.nn.optim import AdamWHyper, AdamWState, adamw_step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 2e-3
    weight_decay: float = 1e-4
    gamma: float = 2.0
    seed: int = 0
    alpha_cap: float = 8.0
    lr_decay: float = 1.0  # multiplicative per-epoch decay


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    wall_time_s: float = 0.0


def class_alpha(y: np.ndarray, classes: tuple[str, ...], cap: float = 8.0) -> tuple[float, ...]:
    """Inverse-frequency weights normalized to mean 1, capped."""
    counts = np.array([max(int(np.sum(y == c)), 0) for c in classes], dtype=np.float64)
    present = counts > 0
    weights = np.ones(len(classes))
    if present.any():
        inv = np.zeros(len(classes))
        inv[present] = counts[present].sum() / (counts[present] * present.sum())
        inv[present] = np.minimum(inv[present], cap)
        inv[present] /= inv[present].mean()
        weights[present] = inv[present]
    return tuple(float(w) for w in weights)


def encode_labels(y: np.ndarray, classes: tuple[str, ...]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    return np.array([index[v] for v in y], dtype=np.int64)


def normalize_windows(x: np.ndarray) -> np.ndarray:
    return np.stack([znormalize(w) for w in x]).astype(np.float32)


def _train(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    loss_cfg: FocalLossConfig,
    cfg: TrainConfig,
) -> TrainHistory:
    rng = np.random.default_rng(cfg.seed + 1)
    hyper = AdamWHyper(lr=cfg.lr, weight_decay=cfg.weight_decay)
    state = AdamWState.init(model.params, hyper)
    history = TrainHistory()
    t0 = time.perf_counter()
    n = len(x)
    lr = cfg.lr
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = grad_of_loss(
                model, x[idx], y[idx], loss_cfg, train=True, rng=rng
            )
            state.hyper = AdamWHyper(lr=lr, weight_decay=cfg.weight_decay)
            model.params, state = adamw_step(model.params, grads, state)
            epoch_loss += loss
            n_batches += 1
        lr *= cfg.lr_decay
        history.losses.append(epoch_loss / max(n_batches, 1))
    history.wall_time_s = time.perf_counter() - t0
    return history


def train_classifier(
    model_cfg: ModelConfig,
    x: np.ndarray,
    y_codes: np.ndarray,
    classes: tuple[str, ...],
    cfg: TrainConfig,
    normalize: bool = True,
) -> tuple[Model, TrainHistory]:
    """Train a sequence-head classifier on [N, L] windows with string labels."""
    xin = normalize_windows(x) if normalize else x.astype(np.float32)
    xin = xin[:, np.newaxis, :]
    y = encode_labels(y_codes, classes)
    alpha = class_alpha(y_codes, classes, cap=cfg.alpha_cap)
    loss_cfg = FocalLossConfig(gamma=cfg.gamma, alpha=alpha)
    model = build_model(model_cfg, seed=cfg.seed)
    history = _train(model, xin, y, loss_cfg, cfg)
    return model, history


def train_delineator(
    model_cfg: ModelConfig,
    x: np.ndarray,
    y_per_sample: np.ndarray,
    cfg: TrainConfig,
    crop_len: int | None = 600,
) -> tuple[Model, TrainHistory]:
    """Train the per-sample head; random crops keep steps cheap."""
    xin = normalize_windows(x)[:, np.newaxis, :]
    y = y_per_sample.astype(np.int64)
    counts = np.bincount(y.ravel(), minlength=model_cfg.n_classes).astype(np.float64)
    alpha = counts.sum() / np.maximum(counts, 1.0) / model_cfg.n_classes
    alpha = np.minimum(alpha / alpha.mean(), cfg.alpha_cap)
    loss_cfg = FocalLossConfig(gamma=cfg.gamma, alpha=tuple(alpha))
    model = build_model(model_cfg, seed=cfg.seed)

    if crop_len and crop_len < xin.shape[2]:
        rng = np.random.default_rng(cfg.seed + 2)
        n_crops = max(xin.shape[2] // crop_len, 1)
        xs, ys = [], []
        for i in range(len(xin)):
            for _ in range(n_crops):
                s = int(rng.integers(0, xin.shape[2] - crop_len + 1))
                xs.append(xin[i, :, s : s + crop_len])
                ys.append(y[i, s : s + crop_len])
        xin = np.stack(xs)
        y = np.stack(ys)

    history = _train(model, xin, y, loss_cfg, cfg)
    return model, history


def to_checkpoint(model: Model, model_id: str, version: str = "1.0.0") -> ModelCheckpoint:
    config = model.config if model.config is not None else {"kind": "mlp"}
    return ModelCheckpoint(
        model_id=model_id, version=version, config=config, weights=dict(model.params)
    )


def classifier_accuracy(model: Model, x: np.ndarray, y_codes: np.ndarray, classes) -> float:
    xin = normalize_windows(x)[:, np.newaxis, :]
    logits, _ = model.forward(xin)
    pred = np.argmax(logits, axis=-1)
    truth = encode_labels(y_codes, tuple(classes))
    return float(np.mean(pred == truth))


# default desk-scale architectures -------------------------------------------

def rhythm_model_config(input_len: int = 2500, n_classes: int = 10) -> ModelConfig:
    from ecgdesk.nn.model import ConvBlockSpec

    return ModelConfig(
        conv_blocks=(
            ConvBlockSpec(8, 9, stride=1, pool=4),
            ConvBlockSpec(16, 9, stride=1, pool=4),
            ConvBlockSpec(24, 9, stride=2, pool=2),
        ),
        d_model=24,
        n_heads=4,
        n_encoder_layers=1,
        ff_dim=48,
        dropout_p=0.1,
        n_classes=n_classes,
        input_len=input_len,
    )


def beat_model_config(input_len: int = 200, n_classes: int = 7) -> ModelConfig:
    from ecgdesk.nn.model import ConvBlockSpec

    return ModelConfig(
        conv_blocks=(
            ConvBlockSpec(8, 7, stride=1, pool=2),
            ConvBlockSpec(16, 7, stride=1, pool=2),
            ConvBlockSpec(16, 5, stride=1, pool=2),
        ),
        d_model=16,
        n_heads=2,
        n_encoder_layers=1,
        ff_dim=32,
        dropout_p=0.1,
        n_classes=n_classes,
        input_len=input_len,
    )


def quality_model_config(input_len: int = 2500) -> ModelConfig:
    from ecgdesk.nn.model import ConvBlockSpec

    return ModelConfig(
        conv_blocks=(
            ConvBlockSpec(8, 9, stride=2, pool=4),
            ConvBlockSpec(16, 9, stride=2, pool=4),
        ),
        d_model=16,
        n_heads=2,
        n_encoder_layers=1,
        ff_dim=32,
        dropout_p=0.1,
        n_classes=2,
        input_len=input_len,
    )


def delineation_model_config(input_len: int = 2500) -> ModelConfig:
    from ecgdesk.nn.model import ConvBlockSpec

    return ModelConfig(
        conv_blocks=(
            ConvBlockSpec(12, 11),
            ConvBlockSpec(16, 11),
            ConvBlockSpec(16, 11),
        ),
        d_model=16,
        n_heads=2,
        n_encoder_layers=0,
        ff_dim=16,
        dropout_p=0.0,
        n_classes=4,
        input_len=input_len,
        head="per_sample",
    )
