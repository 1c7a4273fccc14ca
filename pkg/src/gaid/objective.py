"""Similarity scores and the two-branch bidirectional InfoNCE objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc

DEFAULT_TEMPERATURE = 1 / 0.07
# support-branch weight per dataset
LAMBDA_BY_DATASET = {"msrvtt": 0.8, "didemo": 0.1, "lsmdc": 0.3, "vatex": 0.4}


@dataclass
class LossBreakdown:
    l_pert: float
    l_sup: float
    lam: float
    total: float


def similarity(T: np.ndarray, V: np.ndarray, log_temperature: float) -> np.ndarray:
    """Scaled dot products ``exp(log_temperature) * T_i . V_j`` as a [Q, V] matrix.

    Either side may be per-pair: ``T`` is ``[Q, d]`` or ``[Q, V, d]`` (one text
    embedding per candidate video) and ``V`` is ``[V, d]`` or ``[Q, V, d]``
    (one video embedding per query).
    """
    tau = np.exp(np.asarray(log_temperature, dtype=V.dtype))
    if T.ndim == 2 and V.ndim == 2:
        if T.shape[1] != V.shape[1]:
            raise tc.DimensionError(f"similarity shape mismatch: {T.shape} vs {V.shape}")
        return tau * tc.matmul(T, V.T)
    Tb = T if T.ndim == 3 else T[:, None, :]
    Vb = V if V.ndim == 3 else V[None, :, :]
    try:
        shape = np.broadcast_shapes(Tb.shape, Vb.shape)
    except ValueError:
        raise tc.DimensionError(f"similarity shape mismatch: {T.shape} vs {V.shape}") from None
    if len(shape) != 3:
        raise tc.DimensionError(f"similarity shape mismatch: {T.shape} vs {V.shape}")
    return tau * np.sum(Tb * Vb, axis=-1)


def similarity_backward(grad_s, T, V, log_temperature, scores):
    """Returns ``(dT, dV, dlog_temperature)`` shaped like ``T`` and ``V``."""
    tau = np.exp(np.asarray(log_temperature, dtype=V.dtype))
    dlt = float(np.sum(grad_s * scores))
    if T.ndim == 2 and V.ndim == 2:
        return tau * tc.matmul(grad_s, V), tau * tc.matmul(grad_s.T, T), dlt
    Tb = T if T.ndim == 3 else T[:, None, :]
    Vb = V if V.ndim == 3 else V[None, :, :]
    g = tau * grad_s[..., None]
    dT = g * Vb
    dV = g * Tb
    if T.ndim == 2:
        dT = dT.sum(axis=1)
    if V.ndim == 2:
        dV = dV.sum(axis=0)
    return dT, dV, dlt


def _check_square(sim):
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise tc.DimensionError(f"InfoNCE needs a square score matrix, got {sim.shape}")


def infonce_bidirectional(sim: np.ndarray) -> float:
    """Mean of text->video and video->text cross-entropy with diagonal positives."""
    _check_square(sim)
    t2v = -np.mean(np.diag(tc.log_softmax(sim, axis=1)))
    v2t = -np.mean(np.diag(tc.log_softmax(sim, axis=0)))
    return float(0.5 * (t2v + v2t))


def infonce_backward(sim: np.ndarray) -> np.ndarray:
    _check_square(sim)
    n = sim.shape[0]
    eye = np.eye(n, dtype=sim.dtype)
    return 0.5 * ((tc.softmax(sim, axis=1) - eye) + (tc.softmax(sim, axis=0) - eye)) / n


def total_loss(t_pert, t_sup, V, lam: float, log_temperature: float) -> LossBreakdown:
    """Perturbation branch plus ``lam`` times the support branch."""
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be a finite non-negative number, got {lam}")
    l_pert = infonce_bidirectional(similarity(t_pert, V, log_temperature))
    l_sup = infonce_bidirectional(similarity(t_sup, V, log_temperature))
    return LossBreakdown(l_pert, l_sup, lam, l_pert + lam * l_sup)
