"""Closed-form oracles and special functions.

Units follow the engines: lengths in units of the body distance where one is
implied, times in units of length squared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import special

from .stochastic import MAX_HERMITE_ORDER, hermite_eval


class NumericalError(RuntimeError):
    """Raised when a quadrature or estimator fails to reach its tolerance."""


class SingularInputError(ValueError):
    """Raised when a derivative is requested exactly at a kink."""


def hermite(n: int, x: float) -> float:
    """Physicists' Hermite polynomial ``H_n(x)`` for 0 <= n <= 12."""
    if int(n) != n or not 0 <= n <= MAX_HERMITE_ORDER:
        raise ValueError(f"Hermite order must lie in [0, {MAX_HERMITE_ORDER}], got {n!r}")
    return float(hermite_eval(int(n), float(x)))


def crossing_probability(d: float, tau: float) -> float:
    """Probability that a Wiener path of duration ``tau`` reaches distance ``d``."""
    if d <= 0 or tau <= 0:
        raise ValueError("d and tau must be positive")
    return float(special.erfc(d / math.sqrt(2.0 * tau)))


def averaging_fraction(scale: float, total_time: float, epsilon: float) -> float:
    """Largest fraction m/N of the path that can be averaged at tolerance ``epsilon``.

    Returns ``scale**2 / (2 total_time ln(1/epsilon))``; callers clamp the
    result to ``[1/N, 1/2)``.
    """
    if scale <= 0 or total_time <= 0 or not 0 < epsilon < 1:
        raise ValueError("need scale > 0, total_time > 0 and 0 < epsilon < 1")
    return scale * scale / (2.0 * total_time * math.log(1.0 / epsilon))


# ---------------------------------------------------------------------------
# half-space Casimir-Polder efficiency

_ETA_SERIES = (1 / 40, -1 / 112, 5 / 1152, -7 / 2816, 21 / 13312)
_ETA_SERIES_BELOW = 1e-3


def eta_te(chi: float) -> float:
    """TE efficiency of the Casimir-Polder potential over a dielectric half-space.

    Normalized so that the perfect-conductor limit ``chi -> inf`` gives 1/6.
    A power series replaces the closed form for ``chi < 1e-3``, where the
    closed form cancels catastrophically.
    """
    chi = float(chi)
    if chi < 0 or math.isnan(chi):
        raise ValueError("chi must be non-negative")
    if math.isinf(chi):
        return 1.0 / 6.0
    if chi < _ETA_SERIES_BELOW:
        return chi * sum(c * chi**k for k, c in enumerate(_ETA_SERIES))
    return (1.0 / 6.0 + 1.0 / chi - math.sqrt(1.0 + chi) / (2.0 * chi)
            - math.asinh(math.sqrt(chi)) / (2.0 * chi**1.5))


# ---------------------------------------------------------------------------
# two-plate efficiency
#
# With y = p xi and t = 1/p the double integral becomes
#   gamma(x) = -(180/pi^4) int_0^inf dy y^2 int_0^1 dt log(1 - r^2 e^{-2y}),
#   r = -x y t^2 / (2 + x y t^2),  x = chi_hat / d,
# which is smooth on the unit square after y = v/(1-v).

def _gamma_pieces(x: float, nodes: int):
    gv, gw = np.polynomial.legendre.leggauss(nodes)
    v = 0.5 * (gv + 1.0)
    wv = 0.5 * gw
    y = v / (1.0 - v)
    jac = 1.0 / (1.0 - v) ** 2
    t = v
    wt = wv
    Y, Tt = np.meshgrid(y, t, indexing="ij")
    W = np.outer(wv * jac * y * y, wt)
    a = Y * Tt * Tt
    q = np.exp(-2.0 * Y)
    den = 2.0 + x * a
    r = -x * a / den
    one = 1.0 - r * r * q
    logs = np.log1p(-r * r * q)
    rx = -2.0 * a / den**2
    rxx = 4.0 * a * a / den**3
    lx = -2.0 * r * rx * q / one
    lxx = -2.0 * q * ((rx * rx + r * rxx) * one + 2.0 * r * r * rx * rx * q) / one**2
    c = -180.0 / math.pi**4
    return c * np.sum(W * logs), c * np.sum(W * lx), c * np.sum(W * lxx)


def _converged_pieces(x: float, nodes: int, tol: float = 1e-8, max_nodes: int = 2048):
    if nodes < 32:
        raise ValueError("nodes must be >= 32")
    prev = np.array(_gamma_pieces(x, nodes))
    while nodes < max_nodes:
        nodes *= 2
        cur = np.array(_gamma_pieces(x, nodes))
        scale = np.maximum(np.abs(cur), 1e-300)
        if np.all(np.abs(cur - prev) <= tol * scale):
            return cur
        prev = cur
    raise NumericalError(f"two-plate quadrature did not converge at chi_hat/d = {x}")


def gamma_te(chi_hat: float, d: float = 1.0, nodes: int = 64) -> float:
    """TE efficiency of two delta-function plates at separation ``d``.

    Depends only on ``chi_hat / d``; tends to 1/2 at strong coupling and to
    ``27 (chi_hat/d)^2 / (4 pi^4)`` at weak coupling.
    """
    if d <= 0:
        raise ValueError("d must be positive")
    if chi_hat < 0:
        raise ValueError("chi_hat must be non-negative")
    if chi_hat == 0:
        return 0.0
    if math.isinf(chi_hat):
        return 0.5
    return float(_converged_pieces(chi_hat / d, nodes)[0])


def gamma_te_derivatives(chi_hat: float, d: float, order: int, nodes: int = 64) -> float:
    """Normalized distance derivative of the two-plate energy.

    With ``G(d) = gamma_te(chi_hat/d) / d^3`` this returns
    ``dG/dd / (-3 d^-4)`` for order 1 and ``d2G/dd2 / (12 d^-5)`` for
    order 2, i.e. the derivative relative to that of the strong-coupling
    energy shape. Both tend to 1/2 at strong coupling.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if d <= 0:
        raise ValueError("d must be positive")
    if chi_hat == 0:
        return 0.0
    if math.isinf(chi_hat):
        return 0.5
    x = chi_hat / d
    g, g1, g2 = _converged_pieces(x, nodes)
    xd = -x / d
    xdd = 2.0 * x / d**2
    if order == 1:
        dG = -3.0 * d**-4 * g + d**-3 * g1 * xd
        return float(dG / (-3.0 * d**-4))
    d2G = 12.0 * d**-5 * g - 6.0 * d**-4 * g1 * xd + d**-3 * (g2 * xd * xd + g1 * xdd)
    return float(d2G / (12.0 * d**-5))


# ---------------------------------------------------------------------------
# local time of a bridge segment at a level

@dataclass(frozen=True)
class LocalTimeParams:
    """Bridge segment from ``a`` to ``b`` of duration ``t``, level ``d``, conjugate ``s``."""

    a: float
    b: float
    d: float
    t: float
    s: float = 0.0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")


@njit(cache=True)
def erfcx_scalar(x):
    """Scaled complementary error function ``exp(x^2) erfc(x)``."""
    if x < 0.0:
        return 2.0 * math.exp(x * x) - erfcx_scalar(-x)
    if x < 25.0:
        return math.exp(x * x) * math.erfc(x)
    inv = 1.0 / (2.0 * x * x)
    term = 1.0
    total = 1.0
    for k in range(1, 8):
        term *= -(2 * k - 1) * inv
        total += term
    return total / (x * math.sqrt(math.pi))


@njit(cache=True)
def lt_mgf_parts(a, b, level, t, s):
    """Local-time MGF of a bridge segment and its first two level derivatives.

    ``s = inf`` gives the strong-coupling limit. Returns
    ``(value, d/dlevel, d2/dlevel2)``; the derivatives use the one-sided
    slope of ``|a - level| + |b - level|`` and are meaningless exactly at a
    kink.
    """
    A = (b - a) * (b - a)
    da = a - level
    db = b - level
    B = abs(da) + abs(db)
    dB = -((1.0 if da > 0 else (-1.0 if da < 0 else 0.0)) + (1.0 if db > 0 else (-1.0 if db < 0 else 0.0)))
    e = math.exp((A - B * B) / (2.0 * t))
    if s == 0.0:
        return 1.0, 0.0, 0.0
    if math.isinf(s):
        val = 1.0 - e
        vB = (B / t) * e
        vBB = (1.0 / t - B * B / (t * t)) * e
    else:
        C = math.sqrt(math.pi * t / 2.0) * s
        x = (B + s * t) / math.sqrt(2.0 * t)
        ex = erfcx_scalar(x)
        c0 = math.sqrt(2.0 / (math.pi * t))
        val = 1.0 - C * e * ex
        vB = -C * e * (s * ex - c0)
        vBB = -C * e * (s * s * ex - s * c0 + c0 * B / t)
    return val, vB * dB, vBB * dB * dB


def local_time_density(p: LocalTimeParams, x: float):
    """Continuous density of the local time at ``x >= 0`` and the atom at zero.

    Returns
    -------
    density : float
    atom : float
        Probability that the segment never reaches the level.
    """
    if x < 0:
        raise ValueError("x must be non-negative")
    A = (p.b - p.a) ** 2
    B = abs(p.a - p.d) + abs(p.b - p.d)
    atom = -math.expm1((A - B * B) / (2.0 * p.t))
    density = (x + B) / p.t * math.exp((A - (x + B) ** 2) / (2.0 * p.t))
    return density, atom


def local_time_mgf(p: LocalTimeParams) -> float:
    """``E[exp(-s l)]`` for the local time ``l`` of the segment at level ``d``."""
    if p.s < 0:
        raise ValueError("s must be non-negative")
    return float(lt_mgf_parts(p.a, p.b, p.d, p.t, p.s)[0])


def local_time_mgf_dd(p: LocalTimeParams, order: int) -> float:
    """First or second derivative of :func:`local_time_mgf` with respect to ``d``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if p.a == p.d or p.b == p.d:
        raise SingularInputError("derivative undefined with an endpoint on the level")
    return float(lt_mgf_parts(p.a, p.b, p.d, p.t, p.s)[order])
