"""Directional text perturbation: the std estimator, the stochastic baseline,
the scaled training form, the deterministic inference form and the support
embedding.

All perturbation forms are elementwise in ``t`` and ``std`` and accept any
matching shapes. ``sigma`` is one scalar per leading index (per text row, or
per text-video pair when ``std`` is pairwise), so perturbations stay collinear
with ``std``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor_core as tc


class PerturbMode(str, Enum):
    NONE = "none"
    STP = "stp"
    DASP = "dasp"


@dataclass
class PerturbParams:
    alpha_raw: np.ndarray  # 0-d; alpha = sigmoid(alpha_raw)
    W_s: np.ndarray  # [2d, d]
    b_s: np.ndarray  # [d]

    @property
    def alpha(self) -> float:
        return float(tc.sigmoid(np.asarray(self.alpha_raw)))


def estimate_std(t: np.ndarray, v: np.ndarray, params: PerturbParams) -> np.ndarray:
    """Row-paired estimate ``softplus(concat(t_b, v_b) W_s + b_s)``: [B, d]."""
    if t.shape != v.shape or params.W_s.shape != (2 * t.shape[-1], t.shape[-1]):
        raise tc.DimensionError(f"estimate_std shape mismatch: t{t.shape} v{v.shape} W_s{params.W_s.shape}")
    x = np.concatenate([t, v], axis=-1)
    return tc.softplus(tc.matmul(x, params.W_s) + params.b_s)


def std_pre_activation_pairwise(t: np.ndarray, v: np.ndarray, params: PerturbParams) -> np.ndarray:
    """Pre-softplus std logits for every (text i, video j) pair: [Q, V, d].

    ``v`` is ``[V, d]`` or per-pair ``[Q, V, d]``. ``concat(t_i, v_ij) W_s``
    splits into ``t_i W_s[:d] + v_ij W_s[d:]``, so the 2d-wide concatenation
    is never materialised.
    """
    d = t.shape[-1]
    if t.ndim != 2 or v.shape[-1] != d or params.W_s.shape != (2 * d, d):
        raise tc.DimensionError(f"estimate_std shape mismatch: t{t.shape} v{v.shape} W_s{params.W_s.shape}")
    if v.ndim == 3 and v.shape[0] != t.shape[0]:
        raise tc.DimensionError(f"estimate_std shape mismatch: t{t.shape} v{v.shape}")
    zt = tc.matmul(t, params.W_s[:d])
    zv = tc.matmul(v, params.W_s[d:]) + params.b_s
    if v.ndim == 2:
        zv = zv[None, :, :]
    return zt[:, None, :] + zv


def estimate_std_pairwise(t: np.ndarray, v: np.ndarray, params: PerturbParams) -> np.ndarray:
    return tc.softplus(std_pre_activation_pairwise(t, v, params))


def estimate_std_pairwise_backward(grad_std, z, t, v, params: PerturbParams):
    """Backward of :func:`estimate_std_pairwise` given its logits ``z``.

    Returns ``(dt, dv, dW_s, db_s)`` with ``dv`` shaped like ``v``.
    """
    d = t.shape[-1]
    gz = grad_std * tc.sigmoid(z)
    gzt = gz.sum(axis=1)  # [Q, d]
    gzv = gz.sum(axis=0) if v.ndim == 2 else gz
    gzv2 = gzv.reshape(-1, d)
    dW_s = np.concatenate([tc.matmul(t.T, gzt), tc.matmul(v.reshape(-1, d).T, gzv2)], axis=0)
    db_s = gzv2.sum(axis=0)
    dt = tc.matmul(gzt, params.W_s[:d].T)
    dv = tc.matmul(gzv, params.W_s[d:].T)
    return dt, dv, dW_s, db_s


def _sigma_like(sigma, std: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=std.dtype)
    return sigma.reshape(sigma.shape + (1,) * (std.ndim - sigma.ndim))


def draw_sigma(rng: np.random.Generator, std: np.ndarray, dtype=None) -> np.ndarray:
    """One standard-normal scalar per leading index of ``std``."""
    return rng.standard_normal(std.shape[:-1]).astype(dtype or std.dtype)


def perturb_stp(t, std, rng=None, sigma=None):
    """``t + sigma * std`` with ``sigma ~ N(0, 1)`` per row."""
    if sigma is None:
        sigma = draw_sigma(rng, std)
    return t + _sigma_like(sigma, std) * std


def train_coefficient(alpha: float, sigma) -> np.ndarray:
    # (1 - alpha) grouped so alpha=1 reproduces sigma bit-exactly
    return alpha * np.asarray(sigma) + (1 - alpha)


def perturb_train(t, std, alpha: float, rng=None, sigma=None):
    """``t + (alpha*sigma + 1 - alpha) * std`` with ``sigma ~ N(0, 1)`` per row."""
    if sigma is None:
        sigma = draw_sigma(rng, std)
    return t + _sigma_like(train_coefficient(alpha, sigma), std).astype(std.dtype) * std


def perturb_infer(t, std, alpha: float):
    """Deterministic single-pass form ``t + alpha * std``."""
    return t + alpha * std


def support_embedding(t, std):
    """Boundary point ``t + std`` (the sigma = 1 shell of the training law)."""
    return t + std
