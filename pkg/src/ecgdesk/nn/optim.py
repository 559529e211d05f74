"""AdamW with decoupled weight decay, functional over name->array maps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")


@dataclass
class AdamWState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    hyper: AdamWHyper = field(default_factory=AdamWHyper)

    @classmethod
    def init(cls, params: dict[str, np.ndarray], hyper: AdamWHyper | None = None) -> "AdamWState":
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            hyper=hyper or AdamWHyper(),
        )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One update: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""
    h = state.hyper
    t = state.step + 1
    bc1 = 1.0 - h.beta1**t
    bc2 = 1.0 - h.beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        m = h.beta1 * state.m[k] + (1.0 - h.beta1) * g
        v = h.beta2 * state.v[k] + (1.0 - h.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + h.eps) + h.weight_decay * p
        new_params[k] = (p - h.lr * update).astype(p.dtype)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamWState(step=t, m=new_m, v=new_v, hyper=h)
