"""Model assembly: conv feature stack + transformer encoder + class head.

Two head kinds share the layer set:

* ``sequence`` — conv blocks (stride/pool downsample) -> positional
  encoding -> pre-LN encoder layers -> mean pool -> dense logits per
  window. Used by the beat/rhythm/quality heads.
* ``per_sample`` — stride-1, same-padded conv blocks -> dense logits per
  input sample. Used by the wave delineator, where attention over every
  sample would be wasteful; ``n_encoder_layers`` may be 0 here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ecgdesk.nn.layers import (
    AddPositionalEncoding,
    Conv1d,
    Dense,
    Dropout,
    LayerNorm,
    MaxPool1d,
    MeanPoolTime,
    MultiHeadAttention,
    ReLU,
    Tanh,
    Transpose,
)
from ecgdesk.nn.loss import FocalLossConfig, focal_loss_from_logits


@dataclass(frozen=True)
class ConvBlockSpec:
    out_channels: int
    kernel_size: int
    stride: int = 1
    pool: int = 1


@dataclass(frozen=True)
class ModelConfig:
    conv_blocks: tuple[ConvBlockSpec, ...]
    d_model: int
    n_heads: int
    n_encoder_layers: int
    ff_dim: int
    dropout_p: float
    n_classes: int
    input_len: int
    input_channels: int = 1
    head: str = "sequence"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("n_heads must divide d_model")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.head not in ("sequence", "per_sample"):
            raise ValueError("head must be 'sequence' or 'per_sample'")
        if self.n_encoder_layers < 0 or (self.head == "sequence" and self.n_encoder_layers < 1):
            raise ValueError("sequence head requires n_encoder_layers >= 1")
        blocks = tuple(
            b if isinstance(b, ConvBlockSpec) else ConvBlockSpec(**b) for b in self.conv_blocks
        )
        if not blocks:
            raise ValueError("at least one conv block required")
        if blocks[-1].out_channels != self.d_model:
            raise ValueError("last conv block must emit d_model channels")
        if self.head == "per_sample":
            for b in blocks:
                if b.stride != 1 or b.pool != 1 or b.kernel_size % 2 == 0:
                    raise ValueError("per_sample head needs stride 1, pool 1, odd kernels")
        object.__setattr__(self, "conv_blocks", blocks)

    def to_dict(self) -> dict:
        return {
            "kind": "conv_transformer",
            "conv_blocks": [
                {"out_channels": b.out_channels, "kernel_size": b.kernel_size, "stride": b.stride, "pool": b.pool}
                for b in self.conv_blocks
            ],
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "ff_dim": self.ff_dim,
            "dropout_p": self.dropout_p,
            "n_classes": self.n_classes,
            "input_len": self.input_len,
            "input_channels": self.input_channels,
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            conv_blocks=tuple(ConvBlockSpec(**b) for b in d["conv_blocks"]),
            d_model=int(d["d_model"]),
            n_heads=int(d["n_heads"]),
            n_encoder_layers=int(d["n_encoder_layers"]),
            ff_dim=int(d["ff_dim"]),
            dropout_p=float(d["dropout_p"]),
            n_classes=int(d["n_classes"]),
            input_len=int(d["input_len"]),
            input_channels=int(d.get("input_channels", 1)),
            head=str(d.get("head", "sequence")),
        )


class _Residual:
    """Wraps a sublayer stack as x + f(x)."""

    def __init__(self, name, inner):
        self.name = name
        self.inner = inner

    def init_params(self, rng, dtype):
        out = {}
        for layer in self.inner:
            out.update(layer.init_params(rng, dtype))
        return out

    def forward(self, params, x, train=False, rng=None):
        y = x
        caches = []
        for layer in self.inner:
            y, c = layer.forward(params, y, train=train, rng=rng)
            caches.append(c)
        return x + y, caches

    def backward(self, params, dy, cache):
        grads = {}
        d = dy
        for layer, c in zip(reversed(self.inner), reversed(cache)):
            d, g = layer.backward(params, d, c)
            grads.update(g)
        return d + dy, grads


def _encoder_layer(idx: int, cfg: ModelConfig) -> list:
    """Pre-LN transformer encoder layer."""
    pre = f"enc{idx}"
    attn = _Residual(
        f"{pre}/attn_res",
        [
            LayerNorm(f"{pre}/ln1", cfg.d_model),
            MultiHeadAttention(f"{pre}/mha", cfg.d_model, cfg.n_heads),
            Dropout(f"{pre}/drop1", cfg.dropout_p),
        ],
    )
    ff = _Residual(
        f"{pre}/ff_res",
        [
            LayerNorm(f"{pre}/ln2", cfg.d_model),
            Dense(f"{pre}/ff1", cfg.d_model, cfg.ff_dim),
            ReLU(f"{pre}/relu"),
            Dense(f"{pre}/ff2", cfg.ff_dim, cfg.d_model),
            Dropout(f"{pre}/drop2", cfg.dropout_p),
        ],
    )
    return [attn, ff]


class Model:
    """A layer stack plus its parameter map; forward/backward are functional."""

    def __init__(self, layers: list, params: dict[str, np.ndarray], config: ModelConfig | None = None):
        self.layers = layers
        self.params = params
        self.config = config

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(p.shape)) for p in self.params.values())

    def forward(self, x: np.ndarray, train: bool = False, rng=None):
        caches = []
        y = x
        for layer in self.layers:
            y, c = layer.forward(self.params, y, train=train, rng=rng)
            caches.append(c)
        return y, caches

    def backward(self, dy: np.ndarray, caches) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        grads: dict[str, np.ndarray] = {}
        d = dy
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            d, g = layer.backward(self.params, d, c)
            grads.update(g)
        for k, p in self.params.items():
            if k not in grads:
                grads[k] = np.zeros_like(p)
        return d, grads


def _build_layers(cfg: ModelConfig) -> list:
    layers = []
    c_in = cfg.input_channels
    for i, b in enumerate(cfg.conv_blocks):
        padding = (b.kernel_size - 1) // 2 if cfg.head == "per_sample" else 0
        layers.append(Conv1d(f"conv{i}", c_in, b.out_channels, b.kernel_size, b.stride, padding))
        layers.append(ReLU(f"conv{i}/relu"))
        if b.pool > 1:
            layers.append(MaxPool1d(f"conv{i}/pool", b.pool))
        c_in = b.out_channels
    layers.append(Transpose("to_time_major"))
    if cfg.head == "sequence":
        layers.append(AddPositionalEncoding("pos_enc", cfg.d_model))
    for i in range(cfg.n_encoder_layers):
        layers.extend(_encoder_layer(i, cfg))
    if cfg.n_encoder_layers > 0:
        layers.append(LayerNorm("final_ln", cfg.d_model))
    if cfg.head == "sequence":
        layers.append(MeanPoolTime("mean_pool"))
        layers.append(Dropout("head_drop", cfg.dropout_p))
    layers.append(Dense("head", cfg.d_model, cfg.n_classes))
    return layers


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Fresh model with uniform fan-in initialization, seed-controlled."""
    layers = _build_layers(cfg)
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for layer in layers:
        params.update(layer.init_params(rng, dtype))
    return Model(layers, params, cfg)


def model_from_weights(cfg: ModelConfig, weights: dict[str, np.ndarray]) -> Model:
    layers = _build_layers(cfg)
    return Model(layers, dict(weights), cfg)


def _mlp_layers(dims: list[int], out: str) -> list:
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        layers.append(Dense(f"fc{i}", a, b))
        if i < len(dims) - 2:
            layers.append(ReLU(f"fc{i}/relu"))
    if out == "tanh":
        layers.append(Tanh("out_tanh"))
    elif out != "linear":
        raise ValueError("out must be 'linear' or 'tanh'")
    return layers


def build_mlp(dims: list[int], out: str = "linear", seed: int = 0, dtype=np.float32) -> Model:
    """Plain dense stack used by the generative augmentation module."""
    layers = _mlp_layers(dims, out)
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for layer in layers:
        params.update(layer.init_params(rng, dtype))
    return Model(layers, params, None)


def mlp_from_weights(dims: list[int], out: str, weights: dict[str, np.ndarray]) -> Model:
    return Model(_mlp_layers(dims, out), dict(weights), None)


def model_from_checkpoint(ckpt) -> Model:
    """Instantiate the architecture recorded in a checkpoint's config."""
    cfg = ckpt.config
    if isinstance(cfg, dict):
        kind = cfg.get("kind", "conv_transformer")
        if kind == "mlp":
            return mlp_from_weights(list(cfg["dims"]), cfg.get("out", "linear"), ckpt.weights)
        cfg = ModelConfig.from_dict(cfg)
    return model_from_weights(cfg, ckpt.weights)


def _as_batch(x: np.ndarray, cfg: ModelConfig | None) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    channels = cfg.input_channels if cfg else 1
    if x.ndim == 1:
        return x[np.newaxis, np.newaxis, :], True
    if x.ndim == 2:
        if channels > 1 and x.shape[0] == channels:
            return x[np.newaxis, :, :], True
        return x[:, np.newaxis, :], False
    if x.ndim == 3:
        return x, False
    raise ValueError("input must have 1 to 3 dims")


def model_forward(ckpt, x: np.ndarray) -> np.ndarray:
    """Inference logits for one window or a batch (dropout disabled).

    Returns [n_classes] / [B, n_classes] for sequence heads, or
    [L, n_classes] / [B, L, n_classes] for per-sample heads.
    """
    model = model_from_checkpoint(ckpt)
    cfg = model.config
    xb, single = _as_batch(x, cfg)
    if cfg is not None:
        if xb.shape[1] != cfg.input_channels:
            raise ValueError(f"expected {cfg.input_channels} channels, got {xb.shape[1]}")
        if cfg.head == "sequence" and xb.shape[2] != cfg.input_len:
            raise ValueError(f"expected input length {cfg.input_len}, got {xb.shape[2]}")
    dtype = next(iter(model.params.values())).dtype
    logits, _ = model.forward(xb.astype(dtype))
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    return logits[0] if single else logits


def grad_of_loss(
    model,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: FocalLossConfig,
    train: bool = False,
    rng=None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over the batch and gradients for every parameter.

    ``model`` may be a Model or a ModelCheckpoint.
    """
    if not isinstance(model, Model):
        model = model_from_checkpoint(model)
    inputs = np.asarray(inputs)
    if inputs.size == 0:
        raise ValueError("empty batch")
    dtype = next(iter(model.params.values())).dtype
    logits, caches = model.forward(inputs.astype(dtype), train=train, rng=rng)
    loss, dlogits = focal_loss_from_logits(logits, targets, cfg)
    _, grads = model.backward(dlogits, caches)
    return loss, grads
