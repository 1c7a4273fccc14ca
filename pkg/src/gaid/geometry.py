"""Spherical-cap fractions on the unit hypersphere, kept in log10 throughout.

The exact fraction ``int_0^theta sin^{d-2} / int_0^pi sin^{d-2}`` underflows
double precision long before the dimensions of interest (around 1e-155 at
d=512, theta=30deg), so the integrals are evaluated by Gauss-Legendre
quadrature with log-sum-exp accumulation of ``(d-2) ln sin(phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

LN10 = math.log(10.0)
MAX_NODES = 2**20
_ORDER = 32


@dataclass(frozen=True)
class ConeQuery:
    theta: float
    d: int

    def __post_init__(self):
        if not (0.0 < self.theta <= math.pi) or not math.isfinite(self.theta):
            raise ValueError(f"theta must lie in (0, pi], got {self.theta}")
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")


@lru_cache(maxsize=None)
def _gauss_legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


def _log_integral(upper: float, power: int, panels: int) -> float:
    """ln of int_0^upper sin^power(phi) dphi on ``panels`` equal panels."""
    x, w = _gauss_legendre(_ORDER)
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    phi = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    if power == 0:
        return math.log(float(np.sum(weights)))
    log_f = power * np.log(np.sin(phi))
    return float(logsumexp(log_f, b=weights))


def _adaptive_log_integral(upper: float, power: int, rtol: float = 1e-12) -> float:
    panels = 4
    prev = _log_integral(upper, power, panels)
    while panels * 2 * _ORDER <= MAX_NODES:
        panels *= 2
        cur = _log_integral(upper, power, panels)
        if abs(cur - prev) <= rtol * max(1.0, abs(cur)):
            return cur
        prev = cur
    return prev


def _query(q, d) -> ConeQuery:
    return q if isinstance(q, ConeQuery) else ConeQuery(float(q), int(d))


def cap_fraction_log(q: ConeQuery | float, d: int | None = None) -> float:
    """log10 of the fraction of S^{d-1} within angle ``theta`` of a fixed axis.

    Accepts a :class:`ConeQuery` or ``(theta, d)``.
    """
    q = _query(q, d)
    if q.theta == math.pi:
        return 0.0
    power = q.d - 2
    if q.theta > math.pi / 2:
        # integrate the (smaller) complementary cap, then take log10(1 - P)
        comp = cap_fraction_log(ConeQuery(math.pi - q.theta, q.d))
        return math.log1p(-math.exp(comp * LN10)) / LN10
    num = _adaptive_log_integral(q.theta, power)
    den = math.log(2.0) + _adaptive_log_integral(math.pi / 2, power)
    return (num - den) / LN10


def cap_fraction_approx_log(q: ConeQuery | float, d: int | None = None) -> float:
    """log10 of the concentration estimate exp(-(d-1) theta^2 / 2).

    Only meaningful as a scale: it tends to 1 (log 0) as theta -> 0, whereas
    the true cap fraction tends to 0. ``theta = 0`` is accepted here.
    """
    if isinstance(q, ConeQuery):
        theta, d = q.theta, q.d
    else:
        theta = float(q)
        if not 0.0 <= theta <= math.pi or d is None or d < 2:
            raise ValueError(f"invalid cone query theta={theta}, d={d}")
    return -(d - 1) * theta**2 / (2.0 * LN10)
