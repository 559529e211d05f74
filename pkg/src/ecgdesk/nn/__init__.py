"""Minimal desk-scale neural toolkit with hand-written gradients.

A fixed layer set (conv1d, dense, relu, maxpool, layernorm, multi-head
attention, dropout), softmax/focal loss, AdamW, and a hashed checkpoint
format. No autodiff: every layer implements its own backward pass, which
the test suite checks against central finite differences.
"""

from ecgdesk.nn.layers import (
    conv1d_forward,
    mha_forward,
    positional_encoding,
    softmax,
)
from ecgdesk.nn.loss import FocalLossConfig, focal_loss
from ecgdesk.nn.model import ModelConfig, ConvBlockSpec, Model, build_model, model_forward, grad_of_loss
from ecgdesk.nn.optim import AdamWHyper, AdamWState, adamw_step
from ecgdesk.nn.checkpoint import (
    CheckpointError,
    CheckpointRegistry,
    ModelCheckpoint,
    checkpoint_load,
    checkpoint_save,
)

__all__ = [
    "conv1d_forward",
    "mha_forward",
    "positional_encoding",
    "softmax",
    "FocalLossConfig",
    "focal_loss",
    "ModelConfig",
    "ConvBlockSpec",
    "Model",
    "build_model",
    "model_forward",
    "grad_of_loss",
    "AdamWHyper",
    "AdamWState",
    "adamw_step",
    "ModelCheckpoint",
    "CheckpointError",
    "CheckpointRegistry",
    "checkpoint_save",
    "checkpoint_load",
]
