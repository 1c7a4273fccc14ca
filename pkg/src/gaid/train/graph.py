"""Full model graph with an exact hand-written backward pass.

The video embedding is text-conditioned (both the fusion gate and the
attention query read the text), so a batch of B paired clips is expanded into
all B*B (text i, video j) pairs. Every op in :mod:`gaid.fusion` is row-paired
and runs unchanged on the expanded pair batch; the backward pass folds the
pair gradients back onto the B texts and B clips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor_core as tc
from ..feature_io import project
from ..fusion import aggregate, aggregate_backward, fuse, fuse_backward, gate, gate_backward
from ..objective import (
    LossBreakdown,
    infonce_backward,
    infonce_bidirectional,
    similarity,
    similarity_backward,
)
from ..perturbation import (
    PerturbMode,
    estimate_std_pairwise_backward,
    perturb_infer,
    perturb_stp,
    perturb_train,
    std_pre_activation_pairwise,
    support_embedding,
    train_coefficient,
)
from .params import ModelParams


class NumericError(FloatingPointError):
    pass


@dataclass
class GraphOptions:
    perturb_mode: PerturbMode | str = PerturbMode.DASP
    lam: float = 0.8
    dropout: float = 0.0

    def __post_init__(self):
        self.perturb_mode = PerturbMode(self.perturb_mode)


@dataclass
class Noise:
    """Random draws of one forward pass, kept so backward (and finite
    differences) see exactly the sampled graph."""

    sigma: np.ndarray | None  # [B, B], one scalar per (text, video) pair
    dropout_mask: np.ndarray | None  # [B*B, F], already scaled by 1/(1-p)


def draw_noise(rng: np.random.Generator, B: int, F: int, opts: GraphOptions, dtype=None) -> Noise:
    dtype = dtype or tc.get_dtype()
    sigma = None
    if opts.perturb_mode is not PerturbMode.NONE:
        sigma = rng.standard_normal((B, B)).astype(dtype)
    mask = None
    if opts.dropout > 0:
        keep = rng.random((B * B, F)) >= opts.dropout
        mask = (keep / (1.0 - opts.dropout)).astype(dtype)
    return Noise(sigma, mask)


class _Finite:
    """Raises on the first non-finite intermediate, naming it."""

    def __call__(self, name, x):
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite values first seen in {name!r}")
        return x


_finite = _Finite()


# ---------------------------------------------------------------------------
# Encoding helpers (shared with evaluation)


def _maybe_project(params: ModelParams, modality: str, x: np.ndarray) -> np.ndarray:
    if modality in params.projections:
        w, b = params.projections[modality]
        return project(x, w, b)
    return x


def encode_texts(params: ModelParams, text: np.ndarray) -> np.ndarray:
    t, _ = tc.l2_normalize(_maybe_project(params, "text", text))
    return t


def encode_clips(params: ModelParams, frames: np.ndarray, audio: np.ndarray):
    return _maybe_project(params, "video", frames), _maybe_project(params, "audio", audio)


def fuse_pairs(params: ModelParams, f: np.ndarray, a: np.ndarray, t: np.ndarray, mask=None):
    """Video embeddings for every (text, clip) pair: ``[Q, V, d]`` plus caches.

    ``f``/``a`` are ``[V, F, d]`` (already projected), ``t`` is ``[Q, d]``
    (normalised).
    """
    Q, (V, F, d) = t.shape[0], f.shape
    iv = np.tile(np.arange(V), Q)
    fp, ap = f[iv], a[iv]
    tp = np.repeat(t, V, axis=0)
    g = gcache = None
    if params.gate is not None:
        g, gcache = gate(fp, ap, tp, params.gate)
        v = fuse(fp, ap, g)
    else:
        v = fp
    e, acache = aggregate(v, tp, params.attn, mask)
    return e.reshape(Q, V, d), (fp, ap, tp, g, gcache, acache)


def gates_paired(params: ModelParams, f: np.ndarray, a: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Gate values of each clip conditioned on its own text (row-paired)."""
    if params.gate is None:
        raise ValueError("model has no fusion gate")
    g, _ = gate(f, a, t, params.gate)
    return g


def score_pass(params: ModelParams, t: np.ndarray, E: np.ndarray, mode, sigma=None) -> np.ndarray:
    """One scoring pass: std estimate, text perturbation, normalisation and
    similarity, ``[Q, V]``.

    ``mode`` ``none`` scores the raw text, ``dasp`` the deterministic
    ``t + alpha*std`` and ``stp`` the stochastic ``t + sigma*std`` with the
    supplied ``sigma`` (shape ``[Q, V]``).
    """
    mode = PerturbMode(mode)
    lt = params.log_temperature
    if mode is PerturbMode.NONE:
        return similarity(t, E, lt)
    std = tc.softplus(std_pre_activation_pairwise(t, E, params.perturb))
    if mode is PerturbMode.DASP:
        p = perturb_infer(t[:, None, :], std, params.perturb.alpha)
    else:
        p = perturb_stp(t[:, None, :], std, sigma=sigma)
    p, _ = tc.l2_normalize(p)
    return similarity(p, E, lt)


# ---------------------------------------------------------------------------
# Training graph


def forward_backward(batch, params: ModelParams, opts: GraphOptions, rng=None, noise: Noise | None = None,
                     need_grad: bool = True):
    """Loss (and gradients) of one paired minibatch.

    ``batch`` is ``(frames [B,F,d_v], audio [B,F,d_a], text [B,d_t])`` with
    row b of each describing the same clip. Pass either ``rng`` or an explicit
    ``noise``; the noise actually used is returned so the pass can be
    replayed. Returns ``(LossBreakdown, grads or None, noise)``.
    """
    frames, audio, text = batch
    B, F = frames.shape[:2]
    if audio.shape[:2] != (B, F) or text.shape[0] != B:
        raise tc.DimensionError(f"batch shape mismatch: {frames.shape} {audio.shape} {text.shape}")
    if noise is None:
        noise = draw_noise(rng if rng is not None else np.random.default_rng(0), B, F, opts, frames.dtype)
    mode = opts.perturb_mode

    f, a = encode_clips(params, frames, audio)
    t_raw = _maybe_project(params, "text", text)
    t, t_norm = tc.l2_normalize(t_raw)
    _finite("text embedding", t)
    E, (fp, ap, tp, g, gcache, acache) = fuse_pairs(params, f, a, t, noise.dropout_mask)
    _finite("video embedding", E)
    lt = params.log_temperature

    if mode is PerturbMode.NONE:
        S = similarity(t, E, lt)
        _finite("similarity", S)
        l = infonce_bidirectional(S)
        loss = LossBreakdown(l, l, opts.lam, l + opts.lam * l)
    else:
        z = std_pre_activation_pairwise(t, E, params.perturb)
        std = _finite("std", tc.softplus(z))
        alpha = params.perturb.alpha
        sigma = noise.sigma
        tb = t[:, None, :]
        if mode is PerturbMode.DASP:
            coef = train_coefficient(alpha, sigma).astype(std.dtype)
            P = perturb_train(tb, std, alpha, sigma=sigma)
        else:
            coef = sigma
            P = perturb_stp(tb, std, sigma=sigma)
        Ph, Pn = tc.l2_normalize(P)
        Qs = support_embedding(tb, std)
        Qh, Qn = tc.l2_normalize(Qs)
        S_p = _finite("perturbed similarity", similarity(Ph, E, lt))
        S_s = _finite("support similarity", similarity(Qh, E, lt))
        l_pert = infonce_bidirectional(S_p)
        l_sup = infonce_bidirectional(S_s)
        loss = LossBreakdown(l_pert, l_sup, opts.lam, l_pert + opts.lam * l_sup)
    _finite("loss", loss.total)
    if not need_grad:
        return loss, None, noise

    grads = params.zeros_like()
    if mode is PerturbMode.NONE:
        gS = infonce_backward(S) * (1 + opts.lam)
        dt, dE, dlt = similarity_backward(gS, t, E, lt, S)
    else:
        dPh, dE, dlt = similarity_backward(infonce_backward(S_p), Ph, E, lt, S_p)
        dQh, dE2, dlt2 = similarity_backward(opts.lam * infonce_backward(S_s), Qh, E, lt, S_s)
        dE = dE + dE2
        dlt += dlt2
        dP = tc.l2_normalize_backward(dPh, Ph, Pn)
        dQ = tc.l2_normalize_backward(dQh, Qh, Qn)
        dt = dP.sum(axis=1) + dQ.sum(axis=1)
        dstd = coef[..., None] * dP + dQ
        if mode is PerturbMode.DASP:
            dcoef = np.sum(dP * std, axis=-1)
            dalpha = np.sum(dcoef * (sigma - 1))
            grads.perturb.alpha_raw[...] = dalpha * alpha * (1 - alpha)
        dt2, dE3, dW_s, db_s = estimate_std_pairwise_backward(dstd, z, t, E, params.perturb)
        dt = dt + dt2
        dE = dE + dE3
        grads.perturb.W_s[...] = dW_s
        grads.perturb.b_s[...] = db_s
    grads.log_temperature[...] = dlt

    d = t.shape[1]
    dv, dtp, dattn = aggregate_backward(dE.reshape(B * B, d), acache, params.attn)
    for k in ("W_q", "W_k", "W_v", "W_o"):
        getattr(grads.attn, k)[...] = getattr(dattn, k)
    if params.gate is not None:
        dfp, dap, dg = fuse_backward(dv, fp, ap, g)
        dW_g, db_g, dfp2, dap2, dtp2 = gate_backward(dg, gcache, params.gate)
        grads.gate.W_g[...] = dW_g
        grads.gate.b_g[...] = db_g
        dfp = dfp + dfp2
        dap = dap + dap2
        dtp = dtp + dtp2
    else:
        dfp, dap = dv, np.zeros_like(ap)
    # pair p = i*B + j holds text i and clip j
    df = dfp.reshape(B, B, F, d).sum(axis=0)
    da = dap.reshape(B, B, F, d).sum(axis=0)
    dt = dt + dtp.reshape(B, B, d).sum(axis=1)
    dt_raw = tc.l2_normalize_backward(dt, t, t_norm)

    for modality, x, gx in (("video", frames, df), ("audio", audio, da), ("text", text, dt_raw)):
        if modality in params.projections:
            gw, gb = grads.projections[modality]
            x2 = x.reshape(-1, x.shape[-1])
            g2 = gx.reshape(-1, gx.shape[-1])
            gw[...] = tc.matmul(x2.T, g2)
            gb[...] = g2.sum(axis=0)
    return loss, grads, noise


def loss_only(batch, params: ModelParams, opts: GraphOptions, noise: Noise) -> float:
    return forward_backward(batch, params, opts, noise=noise, need_grad=False)[0].total
