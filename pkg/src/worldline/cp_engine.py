"""Casimir-Polder potential of an atom near a dielectric half-space, and its derivatives.

Units: the atom-interface distance is 1 and results are reported as the
efficiency normalized to the perfect-conductor potential, so every order
of derivative has the oracle :func:`~worldline.analytic.eta_te`. Paths are
one-dimensional (normal to the interface) with a proper-time exponent
fixed by four spacetime dimensions.

Per path the engine draws a closed unit bridge in partial-average form
(the points ``m`` steps either side of the source are drawn from the
Hermite-Gaussian law, the interior is an open bridge), optionally refines
the two steps around the maximum, and integrates the renormalized
functional over proper time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .analytic import NumericalError, averaging_fraction, eta_te
from .rng import next_double, next_normal, seed_state
from .stats import EnsembleAccumulator, PointResult, run_ensemble
from .stochastic import (UnitBridge, bridge_coefficients, draw_scaled_endpoint,
                         bridge_walk, fill_bridge, hermite_eta_inverse, hermite_tables, vdc_base2)

T_SCHEMES = {"exact": 0, "gauss": 1, "sampled": 2}
MAX_SKIP_FRACTION = 1e-6
CHUNK = 256


@dataclass
class DerivativeSpec:
    """Derivative order and the method used to take it.

    Attributes
    ----------
    order : int
        0 for the potential, up to 10 for partial averaging.
    method : {"partial_average", "finite_difference"}
    fd_delta : float
        Stencil half-width in units of the distance.
    pa_m : int
        Steps averaged on each side of the source point.
    subaverage_count : int
        Low-discrepancy draws of the averaged endpoint per path.
    """

    order: int = 0
    method: str = "partial_average"
    fd_delta: float = 0.05
    pa_m: int = 1
    subaverage_count: int = 1

    def __post_init__(self):
        aliases = {"pa": "partial_average", "fd": "finite_difference"}
        self.method = aliases.get(self.method, self.method)
        if self.method not in ("partial_average", "finite_difference"):
            raise ValueError(f"unknown derivative method {self.method!r}")
        if self.subaverage_count < 1:
            raise ValueError("subaverage_count must be >= 1")


@dataclass
class CpConfig:
    """Run parameters for the Casimir-Polder engine.

    ``chi = math.inf`` selects the perfect-conductor limit. ``t_scheme`` is
    ``"auto"`` (exact for the potential and partial averaging, sampled for
    finite differences), ``"exact"``, ``"gauss"`` or ``"sampled"``.
    """

    chi: float = 1.0
    n_steps: int = 10_000
    sub_steps: int = 1
    n_paths: int = 100_000
    derivative: DerivativeSpec = field(default_factory=DerivativeSpec)
    t_quadrature_nodes: int = 64
    epsilon_tolerance: float = 1e-8
    seed: int = 0
    t_scheme: str = "auto"
    t_samples: int = 1
    strict_error: bool = False
    workers: int | None = None

    def __post_init__(self):
        if not self.chi >= 0:
            raise ValueError("chi must be non-negative")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError("n_steps must be an integer >= 2")
        if self.sub_steps < 1 or self.t_samples < 1 or self.n_paths < 1:
            raise ValueError("sub_steps, t_samples and n_paths must be >= 1")
        if not 0 < self.epsilon_tolerance < 1:
            raise ValueError("epsilon_tolerance must lie in (0, 1)")
        if self.t_scheme != "auto" and self.t_scheme not in T_SCHEMES:
            raise ValueError(f"unknown t_scheme {self.t_scheme!r}")
        self.n_steps = int(self.n_steps)
        self.n_paths = int(self.n_paths)

    def resolved_scheme(self) -> str:
        if self.t_scheme != "auto":
            return self.t_scheme
        return "sampled" if self.derivative.method == "finite_difference" else "exact"


@dataclass
class OccupationEstimate:
    """Weighted fraction of path samples inside the medium."""

    fraction: float
    includes_endpoint_weights: bool


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True, inline="always")
def _phi(F, chi):
    # renormalized integrand <eps>^{-3/2} - 1 at occupation F
    if F <= 0.0:
        return 0.0
    if math.isinf(chi):
        return -1.0
    x = 1.0 + chi * F
    return 1.0 / (x * math.sqrt(x)) - 1.0


@njit(cache=True, inline="always")
def _ipow(b, ip):
    r = b * b
    r = r * r
    for _ in range(ip - 4):
        r *= b
    return r


_PAD = -1e300
_LOW2 = np.uint64(3)


# a bridge step exceeds its larger endpoint by 8 sqrt(dt) with probability below e^-128
_MAX_REACH = 8.0


@njit(cache=True, inline="always")
def _step_max(state, a, b, dt):
    """Exact draw of the maximum of a Brownian bridge from ``a`` to ``b`` over ``dt``."""
    u = 1.0 - next_double(state)
    return 0.5 * (a + b + math.sqrt((b - a) * (b - a) - 2.0 * dt * math.log(u)))


@njit(cache=True, nogil=True)
def _continuous_top(state, base, L, jstar, sub_steps, fine2, dt, top):
    """Maximum of the continuous path through the sampled points.

    Only steps whose larger endpoint lies within reach of the discrete
    maximum ``top`` are drawn; the refined segments use their fine points.
    """
    dt_f = dt / sub_steps
    reach = _MAX_REACH * math.sqrt(dt)
    reach_f = _MAX_REACH * math.sqrt(dt_f)
    best = top
    for j in range(L):
        if sub_steps > 1 and (j == jstar - 1 or j == jstar):
            f = fine2[0] if j == jstar - 1 else fine2[1]
            for k in range(sub_steps):
                if max(f[k], f[k + 1]) + reach_f > top:
                    best = max(best, _step_max(state, f[k], f[k + 1], dt_f))
        elif max(base[j], base[j + 1]) + reach > top:
            best = max(best, _step_max(state, base[j], base[j + 1], dt))
    return best


@njit(cache=True, nogil=True)
def cp_build(seed, start, stop, n_steps, m, order, sub_steps, n_sub, c_int, sq_int,
             c_fine, sq_fine, bounds, cum, total, store, exact_max, rows, nvals, tops, shifts,
             signs, cls_w, states, rows_u):
    """Generate the paths of stream ids ``[start, stop)``.

    For each path, stores the tagged values that can lie beyond the
    interface for some subaverage shift (when ``store``), their count, the
    path maximum, the shifts and Hermite signs, the weight of each tag
    class, and the generator state for later draws. ``rows_u`` is a
    uint64 view of ``rows``: the class is written into the two lowest
    mantissa bits of each value (a change of at most 3 ulp).
    """
    inv_n = 1.0 / n_steps
    L = n_steps - 2 * m
    sm = math.sqrt(m * inv_n)
    sd_delta = math.sqrt(max(m * inv_n * (1.0 - 2.0 * m * inv_n) * 0.5, 0.0))
    end_w = 0.5 * (m + 1.0)
    base = np.empty(L + 1)
    fine2 = np.empty((2, sub_steps + 1))
    for i in range(start, stop):
        r = i - start
        state = seed_state(seed, np.uint64(i), np.uint64(0))
        U = next_double(state)
        dlt = sd_delta * next_normal(state)
        # zero bridge plus the linear ramp from dlt to -dlt, fused in one pass
        base[0] = dlt
        base[L] = -dlt
        bridge_walk(state, base, c_int, sq_int, 0.0, dlt, 2.0 * dlt / L)
        jstar = np.argmax(base)
        smax = -math.inf
        for k in range(n_sub):
            u = U + vdc_base2(k)
            if u >= 1.0:
                u -= 1.0
            if u <= 0.0:
                u = 1.1102230246251565e-16
            zb, sg = draw_scaled_endpoint(u, order, bounds, cum, total)
            shifts[r, k] = sm * zb
            signs[r, k] = sg
            if sm * zb > smax:
                smax = sm * zb
        cut = -smax
        cls_w[r, 0] = 1.0
        cls_w[r, 1] = end_w
        cls_w[r, 2] = (end_w if (jstar - 1 == 0 or jstar - 1 == L) else 1.0) / sub_steps
        cls_w[r, 3] = (end_w if (jstar == 0 or jstar == L) else 1.0) / sub_steps
        top = base[jstar]
        nv = 0
        if store:
            for j in range(L + 1):
                if base[j] > cut and not (sub_steps > 1 and j < L and (j == jstar or j == jstar - 1)):
                    rows[r, nv] = base[j]
                    cls = 1 if (j == 0 or j == L) else 0
                    rows_u[r, nv] = (rows_u[r, nv] & ~_LOW2) | np.uint64(cls)
                    nv += 1
        if sub_steps > 1:
            for j in (jstar - 1, jstar):
                if j < 0 or j >= L:
                    continue
                cls = 3 if j == jstar else 2
                fine = fine2[cls - 2]
                fill_bridge(state, fine, base[j], base[j + 1], c_fine, sq_fine)
                for k in range(sub_steps):
                    v = fine[k]
                    if v > top:
                        top = v
                    if store and v > cut:
                        rows[r, nv] = v
                        rows_u[r, nv] = (rows_u[r, nv] & ~_LOW2) | np.uint64(cls)
                        nv += 1
        if store:
            for k in range(nv, rows.shape[1]):
                rows[r, k] = _PAD
        if exact_max:
            top = _continuous_top(state, base, L, jstar, sub_steps, fine2, inv_n, top)
        nvals[r] = nv
        tops[r] = top
        for k in range(4):
            states[r, k] = state[k]


@njit(cache=True, inline="always")
def _wt(bits, cls_w, r):
    return cls_w[r, np.int64(bits & _LOW2)]


@njit(cache=True)
def _exact_j(row, urow, nv, wrow, r, s, p, chi, inv_n):
    """Exact T integral of T^{-1-p/2} Phi at unit distance; ``row`` sorted ascending."""
    total = 0.0
    width = row.shape[0]
    ip = int(p)
    W = 0.0
    for q in range(nv):
        k = width - 1 - q
        b = row[k] + s
        if b <= 0.0:
            break
        W += _wt(urow[k], wrow, r)
        nb = row[k - 1] + s if q + 1 < nv else 0.0
        if nb < 0.0:
            nb = 0.0
        total += _phi(W * inv_n, chi) * (_ipow(b, ip) - _ipow(nb, ip))
    return total / (0.5 * p)


@njit(cache=True)
def _cum_desc(row, urow, nv, wrow, r, sv, cw):
    width = row.shape[0]
    acc = 0.0
    for q in range(nv):
        v = row[width - 1 - q]
        acc += _wt(urow[width - 1 - q], wrow, r)
        sv[q] = v
        cw[q] = acc


@njit(cache=True)
def _weight_above(sv, cw, nc, thr):
    # total weight of descending values strictly above thr
    lo = 0
    hi = nc
    while lo < hi:
        mid = (lo + hi) // 2
        if sv[mid] > thr:
            lo = mid + 1
        else:
            hi = mid
    return cw[lo - 1] if lo > 0 else 0.0


@njit(cache=True)
def _gauss_j(sv, cw, nc, top, s, p, chi, inv_n, gx, gw):
    """Gauss-Legendre in w = sqrt(T_touch / T) for the same integral."""
    mx = top + s
    if mx <= 0.0:
        return 0.0
    total = 0.0
    for i in range(gx.shape[0]):
        w = gx[i]
        F = _weight_above(sv, cw, nc, mx * w - s) * inv_n
        total += gw[i] * w ** (p - 1) * _phi(F, chi)
    return 2.0 * mx**p * total


@njit(cache=True)
def _sampled_j(state, row, urow, nv, wrow, r, top, s, p, chi, inv_n):
    mx = top + s
    if mx <= 0.0:
        return 0.0
    tau = mx * next_double(state) ** (1.0 / p)
    W = 0.0
    for k in range(nv):
        if row[k] + s > tau:
            W += _wt(urow[k], wrow, r)
    return 2.0 * mx**p / p * _phi(W * inv_n, chi)


@njit(cache=True, nogil=True)
def cp_eval(rows, rows_u, nvals, tops, shifts, signs, cls_w, states, sorted_rows, n_steps, order,
            chi, scheme, t_samples, gx, gw, fd_order, fd_deltas, scale, out):
    """Per-path estimates from the output of :func:`cp_build`.

    With ``fd_order = 0`` column 0 holds the partial-average estimate (the
    potential for ``order = 0``); with ``fd_order`` 1 or 2 column q holds the
    finite-difference estimate for ``fd_deltas[q]``. Unsorted rows keep
    their values at the front; sorted rows are ascending with padding first.
    """
    inv_n = 1.0 / n_steps
    p = 4.0 + order
    n_sub = shifts.shape[1]
    width = rows.shape[1]
    sv = np.empty(width)
    cw = np.empty(width)
    state = np.empty(4, dtype=np.uint64)
    for r in range(tops.shape[0]):
        for k in range(4):
            state[k] = states[r, k]
        row = rows[r]
        urow = rows_u[r]
        nv = nvals[r]
        top = tops[r]
        if sorted_rows and scheme == 1:
            _cum_desc(row, urow, nv, cls_w, r, sv, cw)
        if fd_order == 0:
            acc = 0.0
            for k in range(n_sub):
                s = shifts[r, k]
                if signs[r, k] == 0.0 or chi == 0.0:
                    continue
                if math.isinf(chi):
                    mx = top + s
                    J = -(mx**p) / (0.5 * p) if mx > 0.0 else 0.0
                elif scheme == 0:
                    J = _exact_j(row, urow, nv, cls_w, r, s, p, chi, inv_n)
                elif scheme == 1:
                    J = _gauss_j(sv, cw, nv, top, s, p, chi, inv_n, gx, gw)
                else:
                    J = 0.0
                    for _ in range(t_samples):
                        J += _sampled_j(state, row, urow, nv, cls_w, r, top, s, p, chi, inv_n)
                    J /= t_samples
                acc += signs[r, k] * J
            out[r, 0] = scale * acc / n_sub
            continue

        # finite differences on the plain path: source at 0, interface at 1 - delta, 1, 1 + delta
        s = shifts[r, 0]
        mx = top + s
        for q in range(fd_deltas.shape[0]):
            delta = fd_deltas[q]
            dmin = 1.0 - delta
            i_m = 0.0
            i_0 = 0.0
            i_p = 0.0
            if chi > 0.0 and mx > 0.0:
                if scheme == 2:
                    wgt = mx**4 / (2.0 * dmin**4) / t_samples
                    for _ in range(t_samples):
                        tau = mx * next_double(state) ** 0.25
                        th0 = tau / dmin
                        thp = tau * (1.0 + delta) / dmin
                        if math.isinf(chi):
                            i_m -= wgt
                            i_0 -= wgt if mx > th0 else 0.0
                            i_p -= wgt if mx > thp else 0.0
                            continue
                        wm = 0.0
                        w0 = 0.0
                        wp = 0.0
                        for k in range(nv):
                            v = row[k] + s
                            if v > tau:
                                w = _wt(urow[k], cls_w, r)
                                wm += w
                                if v > th0:
                                    w0 += w
                                    if v > thp:
                                        wp += w
                        i_m += wgt * _phi(wm * inv_n, chi)
                        i_0 += wgt * _phi(w0 * inv_n, chi)
                        i_p += wgt * _phi(wp * inv_n, chi)
                elif scheme == 1:
                    # fixed nodes T_i = T_touch(1 - delta) / w_i^2 shared by the stencil
                    pref = 2.0 * (mx / dmin) ** 4
                    for g in range(gx.shape[0]):
                        tau = mx * gx[g]
                        c = pref * gw[g] * gx[g] ** 3
                        if math.isinf(chi):
                            i_m -= c
                            i_0 -= c if mx > tau / dmin else 0.0
                            i_p -= c if mx > tau * (1.0 + delta) / dmin else 0.0
                            continue
                        i_m += c * _phi(_weight_above(sv, cw, nv, tau - s) * inv_n, chi)
                        i_0 += c * _phi(_weight_above(sv, cw, nv, tau / dmin - s) * inv_n, chi)
                        i_p += c * _phi(_weight_above(sv, cw, nv, tau * (1.0 + delta) / dmin - s)
                                        * inv_n, chi)
                else:
                    if math.isinf(chi):
                        J = -(mx**4) / 2.0
                    else:
                        J = _exact_j(row, urow, nv, cls_w, r, s, 4.0, chi, inv_n)
                    i_m = J / dmin**4
                    i_0 = J
                    i_p = J / (1.0 + delta) ** 4
            if fd_order == 1:
                out[r, q] = scale * (i_m - i_p) / (2.0 * delta)
            else:
                out[r, q] = scale * (i_m - 2.0 * i_0 + i_p) / (delta * delta)


# ---------------------------------------------------------------------------
# driver

def _k_factor(order: int) -> float:
    # converts the n-th source-point derivative of the T-integral into the efficiency
    return -4.0 / math.factorial(order + 3)


class _CpJob:
    """Picklable, GIL-free per-block closure over a validated configuration."""

    def __init__(self, config: CpConfig, fd_deltas=None):
        spec = config.derivative
        n = config.n_steps
        self.fd = spec.method == "finite_difference"
        if self.fd:
            if spec.order not in (1, 2):
                raise ValueError("finite differences support orders 1 and 2")
            deltas = np.atleast_1d(np.asarray(fd_deltas if fd_deltas is not None else spec.fd_delta,
                                              dtype=float))
            if np.any(deltas <= 0) or np.any(deltas >= 1.0):
                raise ValueError("fd_delta must satisfy 0 < delta < d (atom would sit inside the medium)")
            self.order, self.m, self.n_sub = 0, 1, 1
            self.fd_order = spec.order
            self.fd_deltas = deltas
            self.scale = _k_factor(spec.order)
        else:
            if not 0 <= spec.order <= 10:
                raise ValueError("partial averaging supports orders 0..10")
            m = int(spec.pa_m)
            if m < 1 or 2 * m >= n:
                raise ValueError("pa_m must satisfy 1 <= m < N/2")
            if config.strict_error:
                limit = averaging_fraction(1.0, 1.0, config.epsilon_tolerance)
                limit = min(max(limit, 1.0 / n), 0.5 - 0.5 / n)
                if m / n > limit:
                    raise ValueError(f"m/N = {m / n:.4g} exceeds the averaging fraction {limit:.4g}")
            self.order, self.m, self.n_sub = spec.order, m, spec.subaverage_count
            self.fd_order = 0
            self.fd_deltas = np.zeros(1)
            self.scale = (_k_factor(spec.order) * hermite_eta_inverse(spec.order)
                          * (m / n) ** (-0.5 * spec.order))
        self.n = n
        self.chi = float(config.chi)
        self.sub_steps = int(config.sub_steps)
        self.scheme = T_SCHEMES[config.resolved_scheme()]
        self.t_samples = int(config.t_samples)
        L = n - 2 * self.m
        self.c_int, self.sq_int = bridge_coefficients(L, 1.0 / n)
        self.c_fine, self.sq_fine = bridge_coefficients(self.sub_steps, 1.0 / (n * self.sub_steps))
        self.bounds, self.cum, self.total = hermite_tables(self.order)
        x, w = np.polynomial.legendre.leggauss(int(config.t_quadrature_nodes))
        self.gx = 0.5 * (x + 1.0)
        self.gw = 0.5 * w
        self.ncols = len(self.fd_deltas) if self.fd else 1

    def __call__(self, seed, start, stop):
        out = np.empty((stop - start, self.ncols))
        for lo in range(start, stop, CHUNK):
            hi = min(lo + CHUNK, stop)
            self._chunk(seed, lo, hi, out[lo - start:hi - start])
        return out

    def _chunk(self, seed, lo, hi, out):
        k = hi - lo
        store = not math.isinf(self.chi) and self.chi > 0.0
        width = self.n - 2 * self.m + 1 + 2 * self.sub_steps if store else 1
        rows = np.empty((k, width))
        nvals = np.zeros(k, dtype=np.int64)
        tops = np.empty(k)
        shifts = np.empty((k, self.n_sub))
        signs = np.empty((k, self.n_sub))
        cls_w = np.empty((k, 4))
        states = np.empty((k, 4), dtype=np.uint64)
        cp_build(np.uint64(seed), lo, hi, self.n, self.m, self.order, self.sub_steps,
                 self.n_sub, self.c_int, self.sq_int, self.c_fine, self.sq_fine, self.bounds,
                 self.cum, self.total, store, math.isinf(self.chi), rows, nvals, tops, shifts,
                 signs, cls_w, states, rows.view(np.uint64))
        sort = store and self.scheme != 2
        if store:
            rows = rows[:, :max(1, int(nvals.max()))]
            if sort:
                rows = np.sort(rows, axis=1)
            else:
                rows = np.ascontiguousarray(rows)
        cp_eval(rows, rows.view(np.uint64), nvals, tops, shifts, signs, cls_w, states, sort, self.n, self.order,
                self.chi, self.scheme, self.t_samples, self.gx, self.gw, self.fd_order,
                self.fd_deltas, self.scale, out)


def _finish(acc, config: CpConfig, extra=None) -> PointResult:
    if acc.count == 0:
        raise NumericalError("no finite path contributions")
    if acc.skipped > MAX_SKIP_FRACTION * config.n_paths:
        raise NumericalError(f"{acc.skipped} of {config.n_paths} paths gave non-finite values")
    stderr = acc.stderr if acc.count > 1 else 0.0
    return PointResult(acc.mean, stderr, eta_te(config.chi), acc, extra or {})


def _ensemble(config: CpConfig, deltas=None):
    job = _CpJob(config, deltas)
    if config.chi == 0:
        # the medium is absent: every path contributes exactly zero
        return [EnsembleAccumulator(config.n_paths, 0.0, 0.0, 0)] * job.ncols
    return run_ensemble(job, config.n_paths, config.seed, config.workers)


def cp_potential(config: CpConfig) -> PointResult:
    """Normalized Casimir-Polder potential; the oracle is ``eta_te(chi)``."""
    if config.derivative.order != 0:
        raise ValueError("cp_potential needs derivative order 0")
    spec = replace(config.derivative, method="partial_average")
    cfg = replace(config, derivative=spec)
    acc = _ensemble(cfg)[0]
    return _finish(acc, cfg)


def cp_derivative_pa(config: CpConfig) -> PointResult:
    """Normalized n-th derivative by Hermite-weighted partial averaging."""
    spec = config.derivative
    if spec.method != "partial_average":
        raise ValueError("config.derivative.method must be partial_average")
    acc = _ensemble(config)[0]
    return _finish(acc, config)


def cp_derivative_fd_multi(config: CpConfig, deltas) -> list[PointResult]:
    """Finite-difference estimates for several stencil widths on shared paths."""
    accs = _ensemble(config, deltas)
    return [_finish(a, config, {"fd_delta": float(d)}) for a, d in zip(accs, np.atleast_1d(deltas))]


def cp_derivative_fd(config: CpConfig) -> PointResult:
    """Normalized first or second derivative by centred finite differences."""
    if config.derivative.method != "finite_difference":
        raise ValueError("config.derivative.method must be finite_difference")
    return cp_derivative_fd_multi(config, [config.derivative.fd_delta])[0]


def run_point(template: CpConfig, axis: str, x: float, n_paths: int, seed: int,
              workers=None) -> PointResult:
    """One sweep point: ``axis`` is ``fd_delta`` (δ/d) or ``pa_fraction`` (m/N)."""
    spec = template.derivative
    if axis == "fd_delta":
        spec = replace(spec, method="finite_difference", fd_delta=float(x))
        cfg = replace(template, derivative=spec, n_paths=n_paths, seed=seed, workers=workers)
        return cp_derivative_fd(cfg)
    m = max(1, int(round(x * template.n_steps)))
    spec = replace(spec, method="partial_average", pa_m=m)
    cfg = replace(template, derivative=spec, n_paths=n_paths, seed=seed, workers=workers)
    return cp_derivative_pa(cfg)


# ---------------------------------------------------------------------------
# single-path utilities

def _occupation_weights(n_steps: int, m: int) -> np.ndarray:
    w = np.zeros(n_steps + 1)
    if m == 1:
        w[1:n_steps] = 1.0
    else:
        w[m + 1:n_steps - m] = 1.0
        w[m] = w[n_steps - m] = 0.5 * (m + 1)
    return w


def occupation_fraction(bridge: UnitBridge, x0: float, d: float, T: float,
                        m: int = 1) -> OccupationEstimate:
    """Weighted fraction of the scaled path ``x0 + sqrt(T) B`` beyond ``x0 + d``.

    The source point carries weight ``m``, the two averaged endpoints
    ``(m + 1)/2`` each and every other retained point 1, for a total of N.
    Points strictly inside the averaged stretches are ignored.
    """
    n = bridge.n_steps
    if bridge.endpoints[0] != bridge.endpoints[1]:
        raise ValueError("occupation needs a closed bridge")
    if not 1 <= m < n / 2:
        raise ValueError("need 1 <= m < N/2")
    w = _occupation_weights(n, m)
    x = x0 + math.sqrt(T) * (np.asarray(bridge.samples) - bridge.samples[0])
    inside = x > x0 + d
    frac = (float(np.dot(w, inside)) + (m if inside[0] else 0.0)) / n
    return OccupationEstimate(frac, m > 1)


def per_path_t_integral(bridge: UnitBridge, x0: float, d: float, chi: float,
                        functional: int = 0, nodes: int = 64, m: int = 1) -> float:
    """Proper-time integral of ``T^{-3-n/2} [<eps>^{-3/2} - 1]`` for one path.

    The integrand vanishes for ``T < T_touch = d^2 / max(B)^2``. With
    ``T = T_touch / w^2`` the remaining range maps to ``w`` in (0, 1], which
    is integrated by ``nodes``-point Gauss-Legendre. ``functional`` is the
    derivative order n setting the power of T.
    """
    n = bridge.n_steps
    b = np.asarray(bridge.samples, dtype=float) - bridge.samples[0]
    w = _occupation_weights(n, m)
    keep = w > 0
    vals, wts = b[keep], w[keep]
    top = vals.max() if vals.size else 0.0
    if top <= 0.0:
        return 0.0
    p = 4.0 + functional
    order = np.argsort(-vals)
    sv = vals[order]
    cw = np.cumsum(wts[order])
    gx, gw = np.polynomial.legendre.leggauss(int(nodes))
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    # thresholds in path units: point counted when sqrt(T) B > d, i.e. B > top * w
    thr = top * gx
    idx = np.searchsorted(-sv, -thr, side="left")
    F = np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0) / n
    if math.isinf(chi):
        phi = np.where(F > 0, -1.0, 0.0)
    else:
        phi = np.where(F > 0, (1.0 + chi * F) ** -1.5 - 1.0, 0.0)
    t_touch = d * d / (top * top)
    return float(2.0 * t_touch ** (-0.5 * p) * np.sum(gw * gx ** (p - 1) * phi))
