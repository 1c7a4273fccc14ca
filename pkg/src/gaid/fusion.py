"""Text-conditioned gated audio-visual fusion and cross-attention pooling.

Every forward op returns its output plus a small cache; the matching
``*_backward`` takes the upstream gradient and that cache.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor_core as tc


class Granularity(str, Enum):
    NONE = "none"
    SAMPLE = "sample"
    FRAME = "frame"
    TOKEN = "token"


@dataclass
class GateParams:
    W_g: np.ndarray  # [g_out, 3d]
    b_g: np.ndarray  # [g_out]
    granularity: Granularity

    @classmethod
    def zeros(cls, d: int, granularity, dtype=None) -> "GateParams":
        granularity = Granularity(granularity)
        g_out = d if granularity is Granularity.TOKEN else 1
        dtype = dtype or tc.get_dtype()
        return cls(np.zeros((g_out, 3 * d), dtype), np.zeros(g_out, dtype), granularity)


@dataclass
class AttnParams:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray


def _check_shapes(f, a, t):
    if f.shape != a.shape or f.ndim != 3 or t.shape != (f.shape[0], f.shape[2]):
        raise tc.DimensionError(f"fusion shape mismatch: f{f.shape} a{a.shape} t{t.shape}")


def gate(f: np.ndarray, a: np.ndarray, t: np.ndarray, params: GateParams):
    """Sigmoid gate on concat(visual, audio, text).

    Returns gates of shape [B] (sample), [B, F] (frame) or [B, F, d] (token)
    and a cache for :func:`gate_backward`.
    """
    _check_shapes(f, a, t)
    B, F, d = f.shape
    gran = Granularity(params.granularity)
    g_out = d if gran is Granularity.TOKEN else 1
    if params.W_g.shape != (g_out, 3 * d) or params.b_g.shape != (g_out,):
        raise tc.DimensionError(f"gate params {params.W_g.shape}/{params.b_g.shape} do not fit d={d}, {gran.value}")
    if gran is Granularity.SAMPLE:
        x = np.concatenate([f.mean(axis=1), a.mean(axis=1), t], axis=-1)  # [B, 3d]
    elif gran in (Granularity.FRAME, Granularity.TOKEN):
        x = np.concatenate([f, a, np.broadcast_to(t[:, None, :], (B, F, d))], axis=-1)  # [B, F, 3d]
    else:
        raise ValueError(f"granularity {gran.value!r} has no gate")
    g = tc.sigmoid(tc.matmul(x, params.W_g.T) + params.b_g)
    if g_out == 1:
        g = g[..., 0]
    return g, (x, g, gran, F)


def gate_backward(grad_g: np.ndarray, cache, params: GateParams):
    """Returns ``(dW_g, db_g, df, da, dt)``."""
    x, g, gran, F = cache
    gz = grad_g * g * (1 - g)
    if gz.ndim == x.ndim - 1:
        gz = gz[..., None]
    gz2 = gz.reshape(-1, gz.shape[-1])
    dW = tc.matmul(gz2.T, x.reshape(-1, x.shape[-1]))
    db = gz2.sum(axis=0)
    dx = tc.matmul(gz, params.W_g)
    d = dx.shape[-1] // 3
    df, da, dt = dx[..., :d], dx[..., d:2 * d], dx[..., 2 * d:]
    if gran is Granularity.SAMPLE:
        df = np.broadcast_to(df[:, None, :] / F, (df.shape[0], F, d)).copy()
        da = np.broadcast_to(da[:, None, :] / F, (da.shape[0], F, d)).copy()
    else:
        dt = dt.sum(axis=1)
    return dW, db, df, da, dt


def _expand(g: np.ndarray, ndim: int = 3) -> np.ndarray:
    while g.ndim < ndim:
        g = g[..., None]
    return g


def fuse(f: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Convex blend ``g*a + (1-g)*f``; sample gates broadcast over F and d,
    frame gates over d."""
    if f.shape != a.shape or g.shape != f.shape[: g.ndim]:
        raise tc.DimensionError(f"fuse shape mismatch: f{f.shape} a{a.shape} g{g.shape}")
    ge = _expand(g, f.ndim)
    return ge * a + (1 - ge) * f


def fuse_backward(grad_v, f, a, g):
    """Returns ``(df, da, dg)``."""
    ge = _expand(g, f.ndim)
    dg = grad_v * (a - f)
    dg = dg.sum(axis=tuple(range(g.ndim, f.ndim))) if g.ndim < f.ndim else dg
    return (1 - ge) * grad_v, ge * grad_v, dg


def aggregate(v: np.ndarray, t: np.ndarray, params: AttnParams, dropout_mask: np.ndarray | None = None):
    """Single-head text-to-frame cross-attention with a mean-pool residual.

    ``u_b = (softmax_F(q_b . k_bf / sqrt(d)) . V_b) W_o + mean_f v_bf`` with
    ``q = t W_q``, ``k = v W_k``, ``V = v W_v``; the result is L2-normalised.
    ``dropout_mask`` (already scaled by 1/(1-p)) multiplies the attention
    weights when given.
    """
    B, F, d = v.shape
    if t.shape != (B, d) or params.W_q.shape != (d, d):
        raise tc.DimensionError(f"aggregate shape mismatch: v{v.shape} t{t.shape} W_q{params.W_q.shape}")
    q = tc.matmul(t, params.W_q)
    k = tc.matmul(v, params.W_k)
    val = tc.matmul(v, params.W_v)
    scale = 1.0 / np.sqrt(d)
    s = np.sum(k * q[:, None, :], axis=-1) * scale
    attn = tc.softmax(s, axis=1)
    w = attn if dropout_mask is None else attn * dropout_mask
    o = np.sum(w[..., None] * val, axis=1)
    u = tc.matmul(o, params.W_o) + v.mean(axis=1)
    e, norm = tc.l2_normalize(u)
    return e, (v, t, q, k, val, attn, w, o, e, norm, dropout_mask, scale)


def aggregate_backward(grad_e: np.ndarray, cache, params: AttnParams):
    """Returns ``(dv, dt, AttnParams-of-gradients)``."""
    v, t, q, k, val, attn, w, o, e, norm, mask, scale = cache
    B, F, d = v.shape
    gu = tc.l2_normalize_backward(grad_e, e, norm)
    dW_o = tc.matmul(o.T, gu)
    go = tc.matmul(gu, params.W_o.T)
    dv = np.broadcast_to(gu[:, None, :] / F, v.shape).copy()
    gw = np.sum(go[:, None, :] * val, axis=-1)  # [B, F]
    gval = w[..., None] * go[:, None, :]
    ga = gw if mask is None else gw * mask
    gs = attn * (ga - np.sum(attn * ga, axis=1, keepdims=True))
    gk = gs[..., None] * q[:, None, :] * scale
    gq = np.sum(gs[..., None] * k, axis=1) * scale
    v2 = v.reshape(-1, d)
    dW_q = tc.matmul(t.T, gq)
    dW_k = tc.matmul(v2.T, gk.reshape(-1, d))
    dW_v = tc.matmul(v2.T, gval.reshape(-1, d))
    dv += tc.matmul(gk, params.W_k.T) + tc.matmul(gval, params.W_v.T)
    dt = tc.matmul(gq, params.W_q.T)
    return dv, dt, AttnParams(dW_q, dW_k, dW_v, dW_o)
