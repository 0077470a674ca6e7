"""Brownian bridges, refined sub-paths, Hermite-Gaussian endpoints, van der Corput points.

Bridges are stored as positions. The numba kernels at the bottom of the module
are shared by the engines, which draw every deviate of a path from one
per-path generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from numpy.polynomial import hermite as _herm

from .rng import (RngStream, next_double, next_normal, normal_after_reject, xoshiro_step,
                  zig_fast)

MAX_HERMITE_ORDER = 12


@dataclass
class RefinedSegment:
    """Fine open bridge spanning one coarse step ``[B_j, B_{j+1}]``."""

    parent_index: int
    sub_samples: np.ndarray
    sub_duration: float


@dataclass
class UnitBridge:
    """Discrete Brownian bridge ``B_0..B_N`` over ``duration``.

    Attributes
    ----------
    samples : ndarray, shape (N + 1,)
        Positions, with ``samples[0] == a`` and ``samples[N] == b``.
    n_steps : int
    endpoints : tuple of float
    duration : float
    refined : list of RefinedSegment
        Optional fine sub-paths attached by the caller.
    meta : dict
        Optional partial-average bookkeeping (``m``, ``xbar`` and so on).
    """

    samples: np.ndarray
    n_steps: int
    endpoints: tuple
    duration: float
    refined: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.samples) != self.n_steps + 1:
            raise ValueError("samples must hold n_steps + 1 points")

    @property
    def dt(self) -> float:
        return self.duration / self.n_steps


@dataclass(frozen=True)
class HermiteEndpointDraw:
    """Partial-average endpoint draw.

    ``xbar`` is the mean of the two averaged points, ``half_spread`` their
    half-difference, and ``sign`` the sign of ``H_n`` at the scaled draw.
    """

    xbar: float
    order: int
    sign: int
    half_spread: float


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True)
def bridge_coefficients(n_steps, dt):
    """Recursion coefficients ``c_j`` and ``sqrt(c_j dt)`` for j = 0..N-1.

    Index 0 is unused; entries j >= 1 drive the step to ``B_j``.
    """
    c = np.empty(n_steps)
    sq = np.empty(n_steps)
    c[0] = 0.0
    sq[0] = 0.0
    for j in range(1, n_steps):
        c[j] = (n_steps - j) / (n_steps - j + 1.0)
        sq[j] = math.sqrt(c[j] * dt)
    return c, sq


@njit(cache=True)
def bridge_walk(state, out, c, sq, p0, offset, slope):
    """Run the bridge recursion with the generator state held in registers.

    Sets ``out[j] = B_j + offset - slope * j`` for ``0 < j < len(out) - 1``,
    where ``B_j = sq[j] z_j + c[j] B_{j-1}`` and ``B_0 = p0``. Draws the
    same normals as repeated :func:`next_normal` calls.
    """
    n = out.shape[0] - 1
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    prev = p0
    for j in range(1, n):
        raw, s0, s1, s2, s3 = xoshiro_step(s0, s1, s2, s3)
        ok, z = zig_fast(raw)
        if not ok:
            state[0], state[1], state[2], state[3] = s0, s1, s2, s3
            z = normal_after_reject(state, raw)
            s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
        prev = sq[j] * z + c[j] * prev
        out[j] = prev + offset - slope * j
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


@njit(cache=True)
def fill_bridge(state, out, a, b, c, sq):
    """Fill ``out[0..L]`` with an open bridge from ``a`` to ``b``.

    ``c`` and ``sq`` come from :func:`bridge_coefficients` for L steps.
    Consumes L - 1 normals.
    """
    n = out.shape[0] - 1
    out[0] = a
    bridge_walk(state, out, c, sq, a - b, b, 0.0)
    out[n] = b


@njit(cache=True)
def fill_bridge_fresh(state, out, a, b, dt):
    """Open bridge without precomputed coefficients (short segments)."""
    n = out.shape[0] - 1
    out[0] = a
    prev = a - b
    for j in range(1, n):
        cj = (n - j) / (n - j + 1.0)
        prev = math.sqrt(cj * dt) * next_normal(state) + cj * prev
        out[j] = prev + b
    out[n] = b


@njit(cache=True, inline="always")
def hermite_eval(n, x):
    """Physicists' Hermite polynomial by upward recurrence."""
    if n == 0:
        return 1.0
    h0 = 1.0
    h1 = 2.0 * x
    for k in range(1, n):
        h0, h1 = h1, 2.0 * x * h1 - 2.0 * k * h0
    return h1


@njit(cache=True)
def _g(n, z):
    # antiderivative helper: d/dz [H_{n-1}(z) e^{-z^2}] = -H_n(z) e^{-z^2}
    return hermite_eval(n - 1, z) * math.exp(-z * z)


@njit(cache=True)
def hermite_invert(u, n, bounds, cum, total):
    """Invert the CDF of ``|H_n(z)| exp(-z^2)`` at ``u`` in [0, 1).

    ``bounds`` holds -inf, the n roots, +inf; ``cum`` the CDF at each bound
    and ``total`` the unnormalized mass.
    """
    k = 0
    while k < n and cum[k + 1] <= u:
        k += 1
    lo = bounds[k]
    hi = bounds[k + 1]
    if not math.isfinite(lo):
        lo = hi - 12.0
    if not math.isfinite(hi):
        hi = lo + 12.0
    g_lo = _g(n, bounds[k]) if math.isfinite(bounds[k]) else 0.0
    g_hi = _g(n, bounds[k + 1]) if math.isfinite(bounds[k + 1]) else 0.0
    # inside the interval the CDF is cum[k] + sgn * (g(z) - g_lo) / total
    sgn = 1.0 if g_hi > g_lo else -1.0
    target = (u - cum[k]) * total
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if sgn * (_g(n, mid) - g_lo) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def draw_scaled_endpoint(u, n, bounds, cum, total):
    """Scaled endpoint ``z`` and sign of ``H_n(z)`` for uniform ``u``.

    Order 0 uses the Gaussian ``exp(-z^2)``.
    """
    if n == 0:
        return _ndtri(u) / math.sqrt(2.0), 1.0
    z = hermite_invert(u, n, bounds, cum, total)
    h = hermite_eval(n, z)
    return z, (1.0 if h > 0.0 else (-1.0 if h < 0.0 else 0.0))


@njit(cache=True)
def _ndtri(p):
    # inverse normal CDF (Acklam) with one Halley step
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    a1, a2, a3 = -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02
    a4, a5, a6 = 1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00
    b1, b2, b3 = -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02
    b4, b5 = 6.680131188771972e01, -1.328068155288572e01
    c1, c2, c3 = -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00
    c4, c5, c6 = -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00
    d1, d2, d3, d4 = 7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / ((((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q / (
            ((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / ((((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    v = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - v / (1.0 + 0.5 * x * v)


@njit(cache=True)
def vdc_base2(index):
    """Radical inverse of ``index`` in base 2."""
    result = 0.0
    f = 0.5
    i = index
    while i > 0:
        if i & 1:
            result += f
        i >>= 1
        f *= 0.5
    return result


# ---------------------------------------------------------------------------
# Hermite tables

@lru_cache(maxsize=None)
def hermite_tables(order: int):
    """Interval bounds, CDF values and total mass of ``|H_n| exp(-z^2)``.

    The mass between consecutive roots of ``H_n`` is exact, using
    ``d/dz [H_{n-1} exp(-z^2)] = -H_n exp(-z^2)``.
    """
    order = int(order)
    if not 0 <= order <= MAX_HERMITE_ORDER:
        raise ValueError(f"Hermite order must lie in [0, {MAX_HERMITE_ORDER}], got {order}")
    if order == 0:
        bounds = np.array([-np.inf, np.inf])
        return bounds, np.array([0.0, 1.0]), math.sqrt(math.pi)
    coeffs = np.zeros(order + 1)
    coeffs[-1] = 1.0
    roots = np.sort(_herm.hermroots(coeffs).real)
    bounds = np.concatenate(([-np.inf], roots, [np.inf]))
    g = np.array([0.0 if not np.isfinite(x) else _g(order, x) for x in bounds])
    masses = np.abs(np.diff(g))
    total = float(masses.sum())
    cum = np.concatenate(([0.0], np.cumsum(masses) / total))
    cum[-1] = 1.0
    return bounds, cum, total


def hermite_eta_inverse(order: int) -> float:
    """Normalization ``(1/sqrt(pi)) * integral |H_n(z)| exp(-z^2) dz``.

    Equal to 1 for order 0 and ``2/sqrt(pi)`` for order 1.
    """
    return hermite_tables(order)[2] / math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# public generators

def _check_steps(n_steps, minimum):
    if int(n_steps) != n_steps or n_steps < minimum:
        raise ValueError(f"n_steps must be an integer >= {minimum}, got {n_steps!r}")


def _check_duration(duration):
    if not duration > 0 or not math.isfinite(duration):
        raise ValueError(f"duration must be positive, got {duration!r}")


def generate_open_bridge(a: float, b: float, n_steps: int, duration: float,
                         rng: RngStream) -> UnitBridge:
    """Bridge from ``a`` to ``b`` in ``n_steps`` equal steps.

    Uses ``B_j = sqrt(c_j dt) z_j + c_j (B_{j-1} - b) + b`` with
    ``c_j = (N - j)/(N - j + 1)``.
    """
    _check_steps(n_steps, 1)
    _check_duration(duration)
    n_steps = int(n_steps)
    out = np.empty(n_steps + 1)
    c, sq = bridge_coefficients(n_steps, duration / n_steps)
    fill_bridge(rng.state(), out, float(a), float(b), c, sq)
    return UnitBridge(out, n_steps, (float(a), float(b)), float(duration))


def generate_closed_bridge(n_steps: int, duration: float, rng: RngStream) -> UnitBridge:
    """Closed bridge starting and ending at 0."""
    _check_steps(n_steps, 2)
    return generate_open_bridge(0.0, 0.0, n_steps, duration, rng)


def complete_path_after_prefix(prefix_end: float, b: float, steps_remaining: int,
                               total_steps: int, duration: float,
                               rng: RngStream) -> UnitBridge:
    """Last ``steps_remaining`` steps of a bridge whose first points are fixed.

    Step size is ``duration / total_steps``; the returned bridge covers
    ``steps_remaining`` steps, starting at ``prefix_end`` and ending at ``b``.
    """
    _check_steps(total_steps, 1)
    if int(steps_remaining) != steps_remaining or not 1 <= steps_remaining <= total_steps:
        raise ValueError("steps_remaining must lie in [1, total_steps]")
    dt = duration / total_steps
    return generate_open_bridge(prefix_end, b, int(steps_remaining), dt * steps_remaining, rng)


def refine_segment(bridge: UnitBridge, j: int, sub_steps: int, rng: RngStream) -> RefinedSegment:
    """Fine open bridge between ``B_j`` and ``B_{j+1}`` over one coarse step."""
    if int(j) != j or not 0 <= j < bridge.n_steps:
        raise IndexError(f"segment index {j} outside [0, {bridge.n_steps})")
    fine = generate_open_bridge(bridge.samples[j], bridge.samples[j + 1], sub_steps, bridge.dt, rng)
    return RefinedSegment(int(j), fine.samples, bridge.dt)


def van_der_corput(index: int, base: int = 2) -> float:
    """Radical inverse of ``index`` in ``base``."""
    if base < 2 or index < 0:
        raise ValueError("need base >= 2 and index >= 0")
    result, denom = 0.0, 1.0
    while index > 0:
        index, digit = divmod(index, base)
        denom *= base
        result += digit / denom
    return result


def sample_hermite_endpoint(x0: float, order: int, m: int, dT: float, rng: RngStream,
                            n_steps: int | None = None, u: float | None = None
                            ) -> HermiteEndpointDraw:
    """Draw the averaged endpoint from the Hermite-Gaussian density.

    The density of ``xbar`` is proportional to
    ``|H_n(z)| exp(-z^2)`` with ``z = (xbar - x0)/sqrt(m dT)``.

    Parameters
    ----------
    x0 : float
        Source point.
    order : int
        Derivative order n, 1 <= n <= 12.
    m : int
        Number of averaged steps on each side of the source point.
    dT : float
        Step duration.
    rng : RngStream
    n_steps : int, optional
        Steps per path. When given, ``half_spread`` is drawn with variance
        ``m (1 - 2m/N) dT / 2``; otherwise it is 0.
    u : float, optional
        Uniform used for the inversion (for low-discrepancy driving).
    """
    if int(order) != order or not 1 <= order <= MAX_HERMITE_ORDER:
        raise ValueError(f"unsupported Hermite order {order!r}")
    if m < 1 or not dT > 0:
        raise ValueError("need m >= 1 and dT > 0")
    state = rng.state()
    if u is None:
        u = next_double(state)
    bounds, cum, total = hermite_tables(int(order))
    z, sign = draw_scaled_endpoint(float(u), int(order), bounds, cum, total)
    spread = 0.0
    if n_steps is not None:
        if 2 * m >= n_steps:
            raise ValueError("need 2m < n_steps")
        spread = math.sqrt(m * (1.0 - 2.0 * m / n_steps) * dT / 2.0) * next_normal(state)
    scale = math.sqrt(m * dT)
    return HermiteEndpointDraw(x0 + scale * z, int(order), int(sign), spread)
