"""Dense numeric kernels shared by every other module.

Tensors are plain numpy arrays in C (row-major) order. The only kernels that
need a fixed evaluation order live here; everything else is ordinary numpy.
"""

from __future__ import annotations

import contextlib
from typing import Iterator

import numba
import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}
_state = {"dtype": np.float32}


class DimensionError(ValueError):
    pass


def set_precision(name: str) -> None:
    """Switch the global working precision ("f32" or "f64")."""
    try:
        _state["dtype"] = _DTYPES[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}") from None


def get_dtype() -> type:
    return _state["dtype"]


def precision_name() -> str:
    return "f64" if _state["dtype"] is np.float64 else "f32"


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


def asarray(x, dtype=None) -> np.ndarray:
    """Contiguous copy-free view in the working dtype (or ``dtype``)."""
    return np.ascontiguousarray(x, dtype=dtype or _state["dtype"])


@numba.njit(cache=True)
def _matmul_kernel(a, b, out):
    m, k = a.shape
    n = b.shape[1]
    if n < 8:
        for i in range(m):
            for j in range(n):
                acc = out.dtype.type(0)
                for p in range(k):
                    acc += a[i, p] * b[p, j]
                out[i, j] = acc
    else:
        for i in range(m):
            for j in range(n):
                out[i, j] = 0
            for p in range(k):
                aip = a[i, p]
                for j in range(n):
                    out[i, j] += aip * b[p, j]
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` with a fixed left-to-right inner summation.

    ``a`` may carry leading batch dims (``[..., m, k]``); ``b`` is ``[k, n]``.
    Each output entry is accumulated as ``((0 + a0*b0) + a1*b1) + ...``, the
    order of a naive triple loop, without fused multiply-adds, so results are
    bit-reproducible and independent of any BLAS build.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    dtype = np.result_type(a, b)
    lead = a.shape[:-1]
    a2 = np.ascontiguousarray(a, dtype=dtype).reshape(-1, a.shape[-1])
    b2 = np.ascontiguousarray(b, dtype=dtype)
    out = np.empty((a2.shape[0], b2.shape[1]), dtype=dtype)
    _matmul_kernel(a2, b2, out)
    return out.reshape(lead + (b2.shape[1],))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic function, overflow-free for any finite input."""
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + e^x) in the form max(x, 0) + log1p(e^{-|x|})."""
    x = np.asarray(x)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def l2_normalize(x: np.ndarray, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x / ||x||, ||x||)``; the norm is kept for the backward pass."""
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    return x / norm, norm


def l2_normalize_backward(grad_y: np.ndarray, y: np.ndarray, norm: np.ndarray, axis: int = -1) -> np.ndarray:
    return (grad_y - y * np.sum(y * grad_y, axis=axis, keepdims=True)) / norm


def check_finite(name: str, x) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {name}")
