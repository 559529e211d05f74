"""Focal loss over class probabilities, with the fused softmax gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ecgdesk.nn.layers import softmax

P_CLAMP = 1e-12
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class FocalLossConfig:
    """gamma = 0 with unit alpha reduces to plain cross-entropy."""

    gamma: float = 2.0
    alpha: tuple[float, ...] | float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    def alpha_for(self, n_classes: int) -> np.ndarray:
        if np.isscalar(self.alpha):
            return np.full(n_classes, float(self.alpha))
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.shape != (n_classes,):
            raise ValueError(f"alpha must have {n_classes} entries")
        if np.any(a <= 0):
            raise ValueError("alpha weights must be positive")
        return a


def focal_loss(probs: np.ndarray, target: int, cfg: FocalLossConfig) -> float:
    """-alpha[t] * (1 - p_t)^gamma * ln(p_t), p_t clamped to [1e-12, 1]."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError("probs must be a 1-D simplex")
    if abs(probs.sum() - 1.0) > SIMPLEX_TOL or np.any(probs < -SIMPLEX_TOL):
        raise ValueError("probs is not a probability simplex")
    if not 0 <= target < len(probs):
        raise ValueError("target out of range")
    alpha = cfg.alpha_for(len(probs))
    p_t = min(max(float(probs[target]), P_CLAMP), 1.0)
    return float(-alpha[target] * (1.0 - p_t) ** cfg.gamma * np.log(p_t))


def focal_loss_from_logits(
    logits: np.ndarray, targets: np.ndarray, cfg: FocalLossConfig
) -> tuple[float, np.ndarray]:
    """Mean focal loss over a batch of logits, plus d(loss)/d(logits).

    ``logits`` is [N, C] (class heads) or [N, T, C] flattened internally
    (per-sample heads); ``targets`` holds class indices of matching shape.
    """
    z = np.asarray(logits)
    t = np.asarray(targets)
    orig_shape = z.shape
    z2 = z.reshape(-1, orig_shape[-1]).astype(np.float64)
    t2 = t.reshape(-1)
    n, c = z2.shape
    if t2.shape != (n,):
        raise ValueError("targets shape incompatible with logits")
    if np.any(t2 < 0) or np.any(t2 >= c):
        raise ValueError("target out of range")
    alpha = cfg.alpha_for(c)
    p = softmax(z2, axis=-1)
    rows = np.arange(n)
    p_t = np.clip(p[rows, t2], P_CLAMP, 1.0)
    one_minus = 1.0 - p_t
    a_t = alpha[t2]
    loss = float(np.mean(-a_t * one_minus**cfg.gamma * np.log(p_t)))

    # dL/dp_t, then the softmax jacobian contraction dL/dz = c_t * p_t * (delta - p)
    if cfg.gamma == 0.0:
        dl_dpt = -a_t / p_t
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            dl_dpt = a_t * (
                cfg.gamma * one_minus ** (cfg.gamma - 1.0) * np.log(p_t)
                - one_minus**cfg.gamma / p_t
            )
        # limit of dL/dp_t as p_t -> 1 is 0 for any gamma > 0
        dl_dpt = np.where(one_minus == 0.0, 0.0, dl_dpt)
    coef = dl_dpt * p_t / n
    dz = -coef[:, None] * p
    dz[rows, t2] += coef
    return loss, dz.reshape(orig_shape).astype(z.dtype)
