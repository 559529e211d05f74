"""Layer primitives: forward passes plus hand-derived backward passes.

Every layer is functional: ``forward`` returns (y, cache) and never mutates
shared state, so inference can run concurrently over one parameter set.
Parameter arrays live in an external name->array dict owned by the model.
"""
from __future__ import annotations

import numpy as np


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    z = np.asarray(z, dtype=np.float64) if z.dtype == np.float64 else np.asarray(z)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def positional_encoding(seq_len: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal table: PE[pos, 2i] = sin(pos/10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    if d_model % 2 != 0:
        raise ValueError("d_model must be even")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.empty((seq_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


# --- conv1d -------------------------------------------------------------------

def _conv_patches(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """[B, C, Lp] -> [B, L_out, C*K] sliding patches."""
    v = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [B, C, Lp-K+1, K]
    v = v[:, :, ::stride, :]
    b, c, l_out, _ = v.shape
    return np.ascontiguousarray(v.transpose(0, 2, 1, 3)).reshape(b, l_out, c * k), l_out


def conv1d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlation: x [C_in, L] or [B, C_in, L] -> [.., C_out, L_out]."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[np.newaxis]
    y, _ = _conv1d_fwd(x, kernel, bias, stride, padding)
    return y[0] if squeeze else y


def _conv1d_fwd(x, kernel, bias, stride, padding):
    b, c_in, l = x.shape
    c_out, c_k, k = kernel.shape
    if c_k != c_in:
        raise ValueError(f"kernel expects {c_k} input channels, got {c_in}")
    l_out = (l + 2 * padding - k) // stride + 1
    if l_out < 1:
        raise ValueError("output length < 1")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    patches, l_out_v = _conv_patches(xp, k, stride)
    patches = patches[:, :l_out, :]
    w2 = kernel.reshape(c_out, c_in * k)
    yt = patches @ w2.T + bias
    y = np.ascontiguousarray(yt.transpose(0, 2, 1))
    return y, (patches, xp.shape[2], x.shape, stride, padding, kernel.shape)


def _conv1d_bwd(dy, cache, kernel):
    patches, lp, xshape, stride, padding, kshape = cache
    c_out, c_in, k = kshape
    b, _, l = xshape
    dyt = np.ascontiguousarray(dy.transpose(0, 2, 1))  # [B, L_out, C_out]
    l_out = dyt.shape[1]
    db = dyt.sum(axis=(0, 1))
    dw2 = np.einsum("blo,blj->oj", dyt, patches, optimize=True)
    dpatch = (dyt @ kernel.reshape(c_out, c_in * k)).reshape(b, l_out, c_in, k)
    dpatch = dpatch.transpose(0, 2, 1, 3)  # [B, C, L_out, K]
    dxp = np.zeros((b, c_in, lp), dtype=dy.dtype)
    for kk in range(k):
        end = kk + stride * (l_out - 1) + 1
        dxp[:, :, kk:end:stride] += dpatch[:, :, :, kk]
    dx = dxp[:, :, padding : padding + l] if padding else dxp
    return dx, dw2.reshape(kshape), db


class Conv1d:
    def __init__(self, name, in_channels, out_channels, kernel_size, stride=1, padding=0):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding

    def init_params(self, rng, dtype):
        fan_in = self.in_channels * self.kernel_size
        bound = 1.0 / np.sqrt(fan_in)
        return {
            f"{self.name}/w": rng.uniform(-bound, bound, (self.out_channels, self.in_channels, self.kernel_size)).astype(dtype),
            f"{self.name}/b": np.zeros(self.out_channels, dtype=dtype),
        }

    def forward(self, params, x, train=False, rng=None):
        return _conv1d_fwd(x, params[f"{self.name}/w"], params[f"{self.name}/b"], self.stride, self.padding)

    def backward(self, params, dy, cache):
        dx, dw, db = _conv1d_bwd(dy, cache, params[f"{self.name}/w"])
        return dx, {f"{self.name}/w": dw, f"{self.name}/b": db}


class ReLU:
    def __init__(self, name):
        self.name = name

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, dy, cache):
        return dy * cache, {}


class MaxPool1d:
    """Non-overlapping max pooling over the time axis of [B, C, L]."""

    def __init__(self, name, pool):
        self.name = name
        self.pool = pool

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x, train=False, rng=None):
        p = self.pool
        if p == 1:
            return x, None
        b, c, l = x.shape
        l_out = l // p
        xr = x[:, :, : l_out * p].reshape(b, c, l_out, p)
        idx = xr.argmax(axis=-1)
        y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, params, dy, cache):
        if cache is None:
            return dy, {}
        idx, xshape = cache
        b, c, l = xshape
        p = self.pool
        l_out = l // p
        dxr = np.zeros((b, c, l_out, p), dtype=dy.dtype)
        np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(xshape, dtype=dy.dtype)
        dx[:, :, : l_out * p] = dxr.reshape(b, c, l_out * p)
        return dx, {}


class Dense:
    """Affine map over the last axis: [..., D_in] -> [..., D_out]."""

    def __init__(self, name, d_in, d_out):
        self.name = name
        self.d_in = d_in
        self.d_out = d_out

    def init_params(self, rng, dtype):
        bound = 1.0 / np.sqrt(self.d_in)
        return {
            f"{self.name}/w": rng.uniform(-bound, bound, (self.d_in, self.d_out)).astype(dtype),
            f"{self.name}/b": np.zeros(self.d_out, dtype=dtype),
        }

    def forward(self, params, x, train=False, rng=None):
        return x @ params[f"{self.name}/w"] + params[f"{self.name}/b"], x

    def backward(self, params, dy, cache):
        x = cache
        w = params[f"{self.name}/w"]
        flat_x = x.reshape(-1, x.shape[-1])
        flat_dy = dy.reshape(-1, dy.shape[-1])
        dw = flat_x.T @ flat_dy
        db = flat_dy.sum(axis=0)
        dx = dy @ w.T
        return dx, {f"{self.name}/w": dw, f"{self.name}/b": db}


class Tanh:
    def __init__(self, name):
        self.name = name

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x, train=False, rng=None):
        y = np.tanh(x)
        return y, y

    def backward(self, params, dy, cache):
        return dy * (1.0 - cache * cache), {}


class LayerNorm:
    """Normalization over the last axis with learned gain and bias."""

    EPS = 1e-5

    def __init__(self, name, dim):
        self.name = name
        self.dim = dim

    def init_params(self, rng, dtype):
        return {
            f"{self.name}/g": np.ones(self.dim, dtype=dtype),
            f"{self.name}/b": np.zeros(self.dim, dtype=dtype),
        }

    def forward(self, params, x, train=False, rng=None):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = xc * inv
        y = xhat * params[f"{self.name}/g"] + params[f"{self.name}/b"]
        return y, (xhat, inv)

    def backward(self, params, dy, cache):
        xhat, inv = cache
        g = params[f"{self.name}/g"]
        axes = tuple(range(dy.ndim - 1))
        dg = (dy * xhat).sum(axis=axes)
        db = dy.sum(axis=axes)
        dxhat = dy * g
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        return dx, {f"{self.name}/g": dg, f"{self.name}/b": db}


class Dropout:
    def __init__(self, name, p):
        self.name = name
        self.p = p

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x, train=False, rng=None):
        if not train or self.p <= 0.0:
            return x, None
        if rng is None:
            raise ValueError("training-mode dropout requires an rng")
        mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, params, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class MultiHeadAttention:
    """Self-attention over [B, T, D] with an optional key mask (True = hidden)."""

    def __init__(self, name, d_model, n_heads):
        if d_model % n_heads != 0:
            raise ValueError("n_heads must divide d_model")
        self.name = name
        self.d_model = d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads

    def init_params(self, rng, dtype):
        bound = 1.0 / np.sqrt(self.d_model)
        out = {}
        for p in ("wq", "wk", "wv", "wo"):
            out[f"{self.name}/{p}"] = rng.uniform(-bound, bound, (self.d_model, self.d_model)).astype(dtype)
        for p in ("bq", "bk", "bv", "bo"):
            out[f"{self.name}/{p}"] = np.zeros(self.d_model, dtype=dtype)
        return out

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, hd = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, h * hd)

    def forward(self, params, x, train=False, rng=None, mask=None):
        n = self.name
        q = x @ params[f"{n}/wq"] + params[f"{n}/bq"]
        k = x @ params[f"{n}/wk"] + params[f"{n}/bk"]
        v = x @ params[f"{n}/wv"] + params[f"{n}/bv"]
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scale = 1.0 / np.sqrt(self.head_dim)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.all():
                raise ValueError("all positions masked")
            scores = np.where(mask[None, None, None, :], -np.inf, scores)
        attn = softmax(scores, axis=-1)
        ctx = self._merge(attn @ vh)
        y = ctx @ params[f"{n}/wo"] + params[f"{n}/bo"]
        return y, (x, qh, kh, vh, attn, ctx, scale)

    def backward(self, params, dy, cache):
        n = self.name
        x, qh, kh, vh, attn, ctx, scale = cache
        flat = lambda a: a.reshape(-1, a.shape[-1])
        dwo = flat(ctx).T @ flat(dy)
        dbo = flat(dy).sum(axis=0)
        dctx = self._split(dy @ params[f"{n}/wo"].T)
        dattn = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = attn.transpose(0, 1, 3, 2) @ dctx
        # softmax jacobian per row; masked columns have attn == 0 hence grad 0
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dqh = (ds @ kh) * scale
        dkh = (ds.transpose(0, 1, 3, 2) @ qh) * scale
        dq, dk, dv = self._merge(dqh), self._merge(dkh), self._merge(dvh)
        grads = {f"{n}/wo": dwo, f"{n}/bo": dbo}
        dx = np.zeros_like(x)
        for d, wname, bname in ((dq, "wq", "bq"), (dk, "wk", "bk"), (dv, "wv", "bv")):
            w = params[f"{n}/{wname}"]
            grads[f"{n}/{wname}"] = flat(x).T @ flat(d)
            grads[f"{n}/{bname}"] = flat(d).sum(axis=0)
            dx += d @ w.T
        return dx, grads


def mha_forward(
    x: np.ndarray,
    weights: dict[str, np.ndarray],
    n_heads: int,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Single attention block over [T, d_model] or [B, T, d_model].

    ``weights`` carries wq/wk/wv/wo [d, d] and bq/bk/bv/bo [d]. ``mask`` is a
    boolean [T] key mask; True hides the position from all queries.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[np.newaxis]
    d_model = x.shape[-1]
    layer = MultiHeadAttention("mha", d_model, n_heads)
    params = {f"mha/{k}": np.asarray(v) for k, v in weights.items()}
    for p in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"):
        if f"mha/{p}" not in params:
            raise ValueError(f"missing weight: {p}")
    y, _ = layer.forward(params, x, mask=mask)
    return y[0] if squeeze else y


def attention_weights(
    x: np.ndarray, weights: dict[str, np.ndarray], n_heads: int, mask: np.ndarray | None = None
) -> np.ndarray:
    """Attention matrices [H, T, T] for a single [T, d_model] input."""
    layer = MultiHeadAttention("mha", x.shape[-1], n_heads)
    params = {f"mha/{k}": np.asarray(v) for k, v in weights.items()}
    _, cache = layer.forward(params, x[np.newaxis], mask=mask)
    return cache[4][0]


class AddPositionalEncoding:
    """Adds the sinusoidal table to [B, T, D]; no parameters."""

    def __init__(self, name, d_model):
        self.name = name
        self.d_model = d_model

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x, train=False, rng=None):
        pe = positional_encoding(x.shape[1], self.d_model, dtype=x.dtype)
        return x + pe[np.newaxis], None

    def backward(self, params, dy, cache):
        return dy, {}


class MeanPoolTime:
    """[B, T, D] -> [B, D] average over time."""

    def __init__(self, name):
        self.name = name

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x, train=False, rng=None):
        return x.mean(axis=1), x.shape[1]

    def backward(self, params, dy, cache):
        t = cache
        return np.repeat(dy[:, np.newaxis, :], t, axis=1) / t, {}


class Transpose:
    """[B, C, L] <-> [B, L, C]."""

    def __init__(self, name):
        self.name = name

    def init_params(self, rng, dtype):
        return {}

    def forward(self, params, x, train=False, rng=None):
        return np.ascontiguousarray(x.transpose(0, 2, 1)), None

    def backward(self, params, dy, cache):
        return np.ascontiguousarray(dy.transpose(0, 2, 1)), {}
