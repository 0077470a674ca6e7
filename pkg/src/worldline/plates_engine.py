"""Casimir energy, force, curvature and torque for two delta-function plates.

The plates sit at ``z = 0`` and ``z = d`` with susceptibility
``chi_hat * delta``. A path of proper time ``T`` starting at ``z0`` visits
``z_j = z0 + sqrt(T) B_j`` for a closed unit bridge ``B``. Each coarse
segment near a plate contributes the exact bridge generating function of its
local time at that plate, evaluated at ``kappa = s^2 chi_hat / T``, so the
single-plate kernels ``K1`` and ``K2`` are products of segment factors and
the renormalized integrand is ``(1 - K1)(1 - K2)``.

Distance derivatives act on segment factors only: ``dK = K * sum(d_value /
value)`` over the segments assigned to the moved plate. The estimators are

* energy ``(1 - K1)(1 - K2)``,
* force ``-(1 - K1) dK2`` (the undifferentiated plate's one-body part is
  subtracted),
* curvature ``-dK1 dK2`` (the second distance derivative written as a mixed
  derivative over the two plates; no renormalization is needed),

each integrated over ``z0``, ``T`` and ``s`` by Monte Carlo and normalized by
the matching perfect-plate result, so all three tend to 1/2 at strong
coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy import special

from .analytic import NumericalError, gamma_te, gamma_te_derivatives, lt_mgf_parts
from .rng import RngStream, next_double, next_normal, seed_state
from .stats import EnsembleAccumulator, PointResult, run_ensemble
from .stochastic import UnitBridge, bridge_coefficients, bridge_walk

# E_pos = int dz0 int dT T^-3 int ds e^{-s^2} <(1 - K1)(1 - K2)>; perfect plates
# at unit distance give (sqrt(pi)/2) (pi^4/180), which NORM maps to 1/2.
NORM = 180.0 / math.pi**4.5
S_WEIGHT = 0.5 * math.sqrt(math.pi)
DEFAULT_V_MAX = 40.0
AMBIGUITY_WIDTHS = 10.0
MAX_SKIP_FRACTION = 1e-6
CHUNK = 256

OBSERVABLES = ("energy", "force", "curvature", "torque")
START_MODES = {"midplane": 0, "jitter": 1, "window": 2}
PLATE_SETS = {"both": (True, True), "lower": (True, False), "upper": (False, True)}
PLATE_NAMES = ("lower", "upper", "none")

# output columns of the path kernel
COL_ENERGY, COL_FORCE, COL_CURV, COL_AMBIG = 0, 1, 2, 3
COL_F1, COL_TX, COL_TY, COL_TZ = 4, 5, 6, 7
COL_FD1, COL_FD2 = 4, 5


@dataclass(frozen=True)
class PlatesConfig:
    """Two-plate run configuration.

    Parameters
    ----------
    chi_hat : float
        Plate strength (length times susceptibility); ``inf`` for perfect plates.
    d : float
        Plate separation.
    n_steps : int
        Points per path.
    n_paths : int
    pa_epsilon : float, optional
        Skip-condition tolerance in units of ``d**2``. A step is examined for a
        plate when ``(z_{j+1} - p)(z_j - p) <= pa_epsilon``; ``0`` detects
        crossings only. ``None`` uses ``1e4 / (N sqrt(T / d**2))``.
    pa_m : int
        Coarse block: an examined step advances the walk by ``pa_m`` points.
    derivative : {"energy", "force", "curvature", "torque"}
    seed : int
    theta : float
        Scale of the Gamma(3/2) proposal for ``v = d**2 / T``.
    t_min : float, optional
        Smallest sampled proper time; defaults to ``d**2 / 40``.
    start : {"jitter", "midplane", "window"}
        How the start point is integrated. ``jitter`` draws it uniformly in
        the midplane cell of the path (exact), ``midplane`` fixes it on the
        midplane with the cell width as weight, ``window`` draws it uniformly
        over the range where the path can reach both plates.
    plates : {"both", "lower", "upper"}
        Which plates are present.
    pivot : tuple of float
        Torque pivot; the path source sits at the transverse origin.
    workers : int, optional
    """

    chi_hat: float
    d: float = 1.0
    n_steps: int = 1000
    n_paths: int = 100_000
    pa_epsilon: float | None = None
    pa_m: int = 1
    derivative: str = "energy"
    seed: int = 0
    theta: float = 1.0
    t_min: float | None = None
    start: str = "window"
    plates: str = "both"
    pivot: tuple = (0.0, 0.0, 0.0)
    workers: int | None = None

    def __post_init__(self):
        if not self.chi_hat >= 0:
            raise ValueError("chi_hat must be non-negative")
        if not (self.d > 0 and math.isfinite(self.d)):
            raise ValueError("d must be positive and finite")
        if int(self.n_steps) != self.n_steps or self.n_steps < 4:
            raise ValueError("n_steps must be an integer >= 4")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError("n_paths must be a positive integer")
        if self.pa_epsilon is not None and not self.pa_epsilon >= 0:
            raise ValueError("pa_epsilon must be non-negative")
        if int(self.pa_m) != self.pa_m or not 1 <= self.pa_m < self.n_steps:
            raise ValueError("pa_m must satisfy 1 <= pa_m < n_steps")
        if self.derivative not in OBSERVABLES:
            raise ValueError(f"derivative must be one of {OBSERVABLES}")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.t_min is not None and not self.t_min > 0:
            raise ValueError("t_min must be positive")
        if self.start not in START_MODES:
            raise ValueError(f"start must be one of {tuple(START_MODES)}")
        if self.plates not in PLATE_SETS:
            raise ValueError(f"plates must be one of {tuple(PLATE_SETS)}")
        if len(self.pivot) != 3:
            raise ValueError("pivot must have three components")

    @property
    def v_max(self) -> float:
        return DEFAULT_V_MAX if self.t_min is None else self.d**2 / self.t_min


@dataclass(frozen=True)
class SegmentFactor:
    """Generating-function factor of one stretch of path.

    ``d_value`` is the derivative with respect to the position of ``plate``;
    ``span`` counts the steps covered.
    """

    value: float
    d_value: float
    plate: str
    span: int

    def __post_init__(self):
        if self.plate not in PLATE_NAMES:
            raise ValueError(f"plate must be one of {PLATE_NAMES}")
        if self.plate == "none" and (self.value != 1.0 or self.d_value != 0.0):
            raise ValueError("a factor without a plate must be exactly 1")


@dataclass(frozen=True)
class SampledKernel:
    """Proper time ``T`` and Gaussian variable ``s`` with their joint weight."""

    T: float
    s: float
    weight: float

    def __post_init__(self):
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError("kernel weight must be positive and finite")


# ---------------------------------------------------------------------------
# kernels

@njit(cache=True, nogil=True)
def _walk(z, T, kappa, lo, hi, m, eps, use_lo, use_hi, vals, d1s, plates, starts, ends):
    """Emit the non-trivial segment factors of one path.

    Returns ``(count, ambiguous)``. Steps that trigger neither plate are
    unit factors and are not stored.
    """
    n = z.shape[0] - 1
    dt = T / n
    amb_w = AMBIGUITY_WIDTHS * math.sqrt(m * dt)
    cnt = 0
    amb = 0
    j = 0
    while j < n:
        za = z[j]
        zn = z[j + 1]
        t_lo = use_lo and (zn - lo) * (za - lo) <= eps
        t_hi = use_hi and (zn - hi) * (za - hi) <= eps
        if not (t_lo or t_hi):
            j += 1
            continue
        end = min(j + m, n)
        zb = z[end]
        if end > j + 1 and use_lo and use_hi:
            # keep the coarse segment only if the bridge cannot reach the other plate
            other = hi if abs(0.5 * (za + zb) - lo) <= abs(0.5 * (za + zb) - hi) else lo
            Bo = abs(za - other) + abs(zb - other)
            if ((zb - za) * (zb - za) - Bo * Bo) / (2.0 * (end - j) * dt) > -50.0:
                end = j + 1
                zb = zn
        if t_lo and t_hi:
            mid = 0.5 * (za + zb)
            dlo = abs(mid - lo)
            dhi = abs(mid - hi)
            plate = 0 if dlo <= dhi else 1
            if dlo < amb_w and dhi < amb_w:
                amb += 1
        else:
            plate = 0 if t_lo else 1
        level = lo if plate == 0 else hi
        t = (end - j) * dt
        B = abs(za - level) + abs(zb - level)
        if ((zb - za) * (zb - za) - B * B) / (2.0 * t) < -50.0:
            val, d1 = 1.0, 0.0
        else:
            val, d1, _ = lt_mgf_parts(za, zb, level, t, kappa)
        vals[cnt] = val
        d1s[cnt] = d1
        plates[cnt] = plate
        starts[cnt] = j
        ends[cnt] = end
        cnt += 1
        j = end
    return cnt, amb


@njit(cache=True, nogil=True)
def _reduce(cnt, vals, d1s, plates, which):
    """Kernel ``K`` of one plate and its derivative ``dK``."""
    K = 1.0
    S = 0.0
    zero = False
    for k in range(cnt):
        if plates[k] != which:
            continue
        v = vals[k]
        K *= v
        if v > 0.0:
            S += d1s[k] / v
        else:
            zero = True
    return K, (0.0 if zero else K * S), zero


@njit(cache=True, nogil=True)
def _draw_kernel(state, d, theta, v_max, t_weight):
    """Draw ``s`` with density prop. to ``exp(-s^2)`` and ``T = d^2 / v``.

    ``v`` follows Gamma(3/2, theta) truncated to ``v <= v_max``. Returns
    ``(s, T, weight)`` with the weight turning the sample into an estimate
    of ``int ds exp(-s^2) int dT T^-3``.
    """
    s = abs(next_normal(state)) * 0.7071067811865476
    while True:
        a = next_normal(state)
        b = next_normal(state)
        c = next_normal(state)
        v = 0.5 * theta * (a * a + b * b + c * c)
        if v <= v_max:
            break
    w = math.sqrt(v) * math.exp(v / theta) * t_weight / d**4
    return s, d * d / v, S_WEIGHT * w


@njit(cache=True, nogil=True)
def _cell(B, n):
    """Nearest positive and negative points of ``B_1..B_{n-1}`` (0 when absent)."""
    bp = math.inf
    bm = -math.inf
    for k in range(1, n):
        b = B[k]
        if b > 0.0 and b < bp:
            bp = b
        elif b < 0.0 and b > bm:
            bm = b
    if math.isinf(bp):
        bp = 0.0
    if math.isinf(bm):
        bm = 0.0
    return bp, bm


@njit(cache=True, nogil=True)
def plates_block(seed, start, stop, n, d, chi_hat, m, eps_user, theta, v_max, t_weight,
                 start_mode, use_lo, use_hi, torque, px, py, fd_delta, c, sq, out):
    """Per-path estimator columns for stream ids ``[start, stop)``.

    Columns: energy, force, curvature, ambiguous-segment count; then either
    plate-1 force and the torque about ``(px, py)`` (when ``torque``), or the
    finite-difference first and second derivatives (when ``fd_delta > 0``).
    All physical columns carry the normalization and sampling weights.
    """
    B = np.empty(n + 1)
    z = np.empty(n + 1)
    bx = np.empty(n + 1)
    by = np.empty(n + 1)
    vals = np.empty(n)
    d1s = np.empty(n)
    plates = np.empty(n, dtype=np.int64)
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    c_e = NORM * d**3
    c_f = NORM * d**4 / 3.0
    c_c = NORM * d**5 / 12.0
    for i in range(start, stop):
        r = i - start
        for k in range(out.shape[1]):
            out[r, k] = 0.0
        state = seed_state(seed, np.uint64(i), np.uint64(0))
        s, T, w = _draw_kernel(state, d, theta, v_max, t_weight)
        u = next_double(state)
        B[0] = 0.0
        B[n] = 0.0
        bridge_walk(state, B, c, sq, 0.0, 0.0, 0.0)
        if torque:
            bx[0] = bx[n] = by[0] = by[n] = 0.0
            bridge_walk(state, bx, c, sq, 0.0, 0.0, 0.0)
            bridge_walk(state, by, c, sq, 0.0, 0.0, 0.0)
        sqt = math.sqrt(T)
        if start_mode == 2:
            bmax = B.max()
            bmin = B.min()
            margin = AMBIGUITY_WIDTHS * math.sqrt(m * T / n)
            # the closest separation evaluated needs the widest window
            zlo = d * (1.0 - fd_delta) - margin - sqt * bmax
            zhi = margin - sqt * bmin
            if zhi <= zlo:
                continue
            z0 = zlo + u * (zhi - zlo)
            w *= zhi - zlo
        else:
            bp, bm = _cell(B, n)
            w *= n * sqt * (bp - bm) * 0.5
            if start_mode == 1:
                z0 = 0.5 * d - 0.5 * sqt * (bp + (bm - bp) * u)
            else:
                z0 = 0.5 * d
        if w == 0.0:
            continue
        for k in range(n + 1):
            z[k] = z0 + sqt * B[k]
        kappa = math.inf if math.isinf(chi_hat) else s * s * chi_hat / T
        if eps_user >= 0.0:
            eps = eps_user * d * d
        else:
            eps = 1e4 / (n * sqt / d) * d * d
        cnt, amb = _walk(z, T, kappa, 0.0, d, m, eps, use_lo, use_hi,
                         vals, d1s, plates, starts, ends)
        K1, dK1, _ = _reduce(cnt, vals, d1s, plates, 0)
        K2, dK2, _ = _reduce(cnt, vals, d1s, plates, 1)
        out[r, COL_ENERGY] = c_e * w * (1.0 - K1) * (1.0 - K2)
        out[r, COL_FORCE] = c_f * w * (1.0 - K1) * dK2
        out[r, COL_CURV] = -c_c * w * dK1 * dK2
        out[r, COL_AMBIG] = amb
        if torque and dK1 != 0.0:
            g = -c_f * w * (1.0 - K2) * K1
            f1 = 0.0
            tx = 0.0
            ty = 0.0
            for k in range(cnt):
                if plates[k] != 0:
                    continue
                fj = g * d1s[k] / vals[k]
                rx = 0.5 * sqt * (bx[starts[k]] + bx[ends[k]]) - px
                ry = 0.5 * sqt * (by[starts[k]] + by[ends[k]]) - py
                f1 += fj
                tx += ry * fj
                ty -= rx * fj
            out[r, COL_F1] = f1
            out[r, COL_TX] = tx
            out[r, COL_TY] = ty
        if fd_delta > 0.0:
            h = fd_delta * d
            e = np.empty(2)
            for q in range(2):
                level = d - h if q == 0 else d + h
                cq, _ = _walk(z, T, kappa, 0.0, level, m, eps, use_lo, use_hi,
                              vals, d1s, plates, starts, ends)
                Kq1, _, _ = _reduce(cq, vals, d1s, plates, 0)
                Kq2, _, _ = _reduce(cq, vals, d1s, plates, 1)
                e[q] = w * (1.0 - Kq1) * (1.0 - Kq2)
            e0 = w * (1.0 - K1) * (1.0 - K2)
            # derivatives of the raw energy, normalized like force and curvature
            out[r, COL_FD1] = c_f * (e[0] - e[1]) / (2.0 * h)
            out[r, COL_FD2] = c_c * (e[0] - 2.0 * e0 + e[1]) / (h * h)


# ---------------------------------------------------------------------------
# per-path utilities

def _config_eps(config: PlatesConfig, T: float) -> float:
    if config.pa_epsilon is not None:
        return config.pa_epsilon * config.d**2
    return 1e4 / (config.n_steps * math.sqrt(T) / config.d) * config.d**2


def _kappa(config: PlatesConfig, s: float, T: float) -> float:
    return math.inf if math.isinf(config.chi_hat) else s * s * config.chi_hat / T


def _coordinates(bridge) -> np.ndarray:
    z = np.asarray(bridge.samples if isinstance(bridge, UnitBridge) else bridge, dtype=float)
    if z.ndim != 1 or len(z) < 2:
        raise ValueError("path coordinates must be a 1-D array of at least two points")
    return z


def _walk_path(z, T, s, config: PlatesConfig):
    n = len(z) - 1
    bufs = (np.empty(n), np.empty(n), np.empty(n, dtype=np.int64),
            np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64))
    use_lo, use_hi = PLATE_SETS[config.plates]
    cnt, amb = _walk(z, float(T), _kappa(config, s, T), 0.0, float(config.d), int(config.pa_m),
                     _config_eps(config, T), use_lo, use_hi, *bufs)
    return cnt, amb, bufs


def midplane_reweight(bridge, x0: float) -> float:
    """Width weight ``N (x_+ - x_-) / 2`` of a path started on the midplane.

    ``x_+`` is the smallest path coordinate above ``x0`` and ``x_-`` the
    largest below, both taken over the interior points ``1..N-1`` and
    replaced by ``x0`` when absent. Starting every path at ``x0`` with this
    weight replaces the integral over start points: the interval of start
    points for which the start is the path point nearest the midplane has
    exactly half this width, and cyclic relabeling covers the other points.
    """
    z = _coordinates(bridge)
    n = len(z) - 1
    rel = z[1:n] - x0
    above = rel[rel > 0]
    below = rel[rel < 0]
    xp = above.min() if above.size else 0.0
    xm = below.max() if below.size else 0.0
    return n * (xp - xm) / 2.0


def segment_factors(bridge, T: float, s: float, config: PlatesConfig) -> list[SegmentFactor]:
    """Walk a path and return its segment factors in order.

    ``bridge`` holds the scaled coordinates ``x_j = x0 + sqrt(T) B_j`` (a
    :class:`UnitBridge` or an array). The product of the values of the
    factors assigned to a plate is that plate's kernel.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if s < 0:
        raise ValueError("s must be non-negative")
    z = _coordinates(bridge)
    cnt, amb, (vals, d1s, plates, starts, ends) = _walk_path(z, T, s, config)
    out = []
    j = 0
    for k in range(cnt):
        out.extend(SegmentFactor(1.0, 0.0, "none", 1) for _ in range(starts[k] - j))
        out.append(SegmentFactor(float(vals[k]), float(d1s[k]), PLATE_NAMES[plates[k]],
                                 int(ends[k] - starts[k])))
        j = ends[k]
    out.extend(SegmentFactor(1.0, 0.0, "none", 1) for _ in range(len(z) - 1 - j))
    return out


def path_kernels(bridge, T: float, s: float, config: PlatesConfig) -> dict:
    """Kernels ``K1``, ``K2``, derivatives ``dK1``, ``dK2`` and diagnostics of one path."""
    z = _coordinates(bridge)
    cnt, amb, (vals, d1s, plates, _, _) = _walk_path(z, T, s, config)
    K1, dK1, zero1 = _reduce(cnt, vals, d1s, plates, 0)
    K2, dK2, zero2 = _reduce(cnt, vals, d1s, plates, 1)
    return {"K1": K1, "K2": K2, "dK1": dK1, "dK2": dK2, "ambiguous": amb,
            "segments": cnt, "renormalized": (1.0 - K1) * (1.0 - K2)}


def torque_weight(bridge, T: float, config: PlatesConfig, pivot=(0.0, 0.0, 0.0), axis=None,
                  s: float = 1.0) -> np.ndarray:
    """Torque on the lower plate carried by one three-dimensional path.

    ``bridge`` is a sequence ``(x, y, z)`` of scaled coordinate paths. Each
    segment assigned to the lower plate carries the force density
    ``f_j = (1 - K2) K1 d_value_j / value_j`` along ``z``; the weight is
    ``sum_j (rho_j - pivot) x (f_j e_z)`` with ``rho_j`` the segment midpoint.
    When ``axis`` is given the vector is projected onto it.
    """
    if len(bridge) != 3:
        raise ValueError("torque_weight needs x, y and z coordinate paths")
    x, y, z = (_coordinates(b) for b in bridge)
    if not len(x) == len(y) == len(z):
        raise ValueError("coordinate paths must have equal length")
    cnt, _, (vals, d1s, plates, starts, ends) = _walk_path(z, T, s, config)
    K1, dK1, _ = _reduce(cnt, vals, d1s, plates, 0)
    K2, _, _ = _reduce(cnt, vals, d1s, plates, 1)
    tau = np.zeros(3)
    if dK1 == 0.0:
        return tau
    p = np.asarray(pivot, dtype=float)
    for k in range(cnt):
        if plates[k] != 0:
            continue
        f = (1.0 - K2) * K1 * d1s[k] / vals[k]
        rho = np.array([0.5 * (x[starts[k]] + x[ends[k]]), 0.5 * (y[starts[k]] + y[ends[k]]),
                        0.5 * (z[starts[k]] + z[ends[k]])])
        tau += np.cross(rho - p, np.array([0.0, 0.0, f]))
    if axis is not None:
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        tau = np.dot(tau, a) * a
    return tau


def _t_weight(config: PlatesConfig) -> float:
    theta = config.theta
    z_trunc = special.gammainc(1.5, config.v_max / theta)
    return special.gamma(1.5) * theta**1.5 * z_trunc


def sample_kernel(rng: RngStream, config: PlatesConfig | None = None) -> SampledKernel:
    """Draw ``(T, s)`` and the weight estimating ``int ds e^{-s^2} int dT T^-3``."""
    config = config or PlatesConfig(chi_hat=1.0)
    s, T, w = _draw_kernel(rng.state(), float(config.d), float(config.theta),
                           float(config.v_max), _t_weight(config))
    return SampledKernel(T=float(T), s=float(s), weight=float(w))


# ---------------------------------------------------------------------------
# ensemble estimators

class _PlatesJob:
    """GIL-free per-block closure over a validated configuration."""

    def __init__(self, config: PlatesConfig, fd_delta: float = 0.0):
        if fd_delta and not 0 < fd_delta < 1:
            raise ValueError("fd_delta must satisfy 0 < delta < 1 (relative to d)")
        if fd_delta and config.derivative == "torque":
            raise ValueError("finite differences do not apply to the torque")
        self.config = config
        self.n = int(config.n_steps)
        self.c, self.sq = bridge_coefficients(self.n, 1.0 / self.n)
        self.t_weight = _t_weight(config)
        self.torque = config.derivative == "torque"
        self.fd_delta = float(fd_delta)
        self.ncols = 8 if self.torque else (6 if self.fd_delta else 4)

    def __call__(self, seed, start, stop):
        cfg = self.config
        out = np.empty((stop - start, self.ncols))
        use_lo, use_hi = PLATE_SETS[cfg.plates]
        eps = -1.0 if cfg.pa_epsilon is None else float(cfg.pa_epsilon)
        for lo in range(start, stop, CHUNK):
            hi = min(lo + CHUNK, stop)
            plates_block(np.uint64(seed), lo, hi, self.n, float(cfg.d), float(cfg.chi_hat),
                         int(cfg.pa_m), eps, float(cfg.theta), float(cfg.v_max), self.t_weight,
                         START_MODES[cfg.start], use_lo, use_hi, self.torque,
                         float(cfg.pivot[0]), float(cfg.pivot[1]), self.fd_delta,
                         self.c, self.sq, out[lo - start:hi - start])
        return out


def _check(accs, config: PlatesConfig):
    acc = accs[0]
    if acc.count == 0:
        raise NumericalError("no finite path contributions")
    if acc.skipped > MAX_SKIP_FRACTION * config.n_paths:
        raise NumericalError(f"{acc.skipped} of {config.n_paths} paths gave non-finite values")


def _result(acc, oracle, extra) -> PointResult:
    return PointResult(acc.mean, acc.stderr if acc.count > 1 else 0.0, oracle, acc, extra)


def _oracle(config: PlatesConfig, observable: str) -> float:
    if observable == "energy":
        return gamma_te(config.chi_hat, config.d)
    order = 1 if observable == "force" else 2
    return gamma_te_derivatives(config.chi_hat, config.d, order)


@dataclass
class PlatesResult:
    """Energy, force and curvature estimated on one ensemble."""

    energy: PointResult
    force: PointResult
    curvature: PointResult
    ambiguous_per_path: float
    extra: dict = field(default_factory=dict)

    def __getitem__(self, observable: str) -> PointResult:
        return getattr(self, observable)


def plates_run(config: PlatesConfig) -> PlatesResult:
    """Estimate energy, force and curvature together from one ensemble."""
    zero = config.chi_hat == 0
    if zero:
        # transparent plates: every path contributes exactly zero
        accs = [EnsembleAccumulator(config.n_paths, 0.0, 0.0, 0)] * 4
    else:
        accs = run_ensemble(_PlatesJob(replace(config, derivative="energy")), config.n_paths,
                            config.seed, config.workers)
        _check(accs, config)
    extra = {"n_paths": config.n_paths}
    res = [_result(accs[k], 0.0 if zero else _oracle(config, name), extra)
           for k, name in enumerate(("energy", "force", "curvature"))]
    return PlatesResult(*res, ambiguous_per_path=accs[COL_AMBIG].mean, extra=extra)


def plates_energy(config: PlatesConfig) -> PointResult:
    """Normalized energy; the oracle is ``gamma_te(chi_hat, d)``."""
    return plates_run(config).energy


def plates_force(config: PlatesConfig) -> PointResult:
    """Normalized first distance derivative; the oracle is ``gamma_te_derivatives(.., 1)``."""
    return plates_run(config).force


def plates_curvature(config: PlatesConfig) -> PointResult:
    """Normalized second distance derivative; the oracle is ``gamma_te_derivatives(.., 2)``."""
    return plates_run(config).curvature


def plates_fd(config: PlatesConfig, delta: float) -> tuple[PointResult, PointResult]:
    """Central finite differences of the energy at ``d (1 +- delta)``.

    The three separations share paths, proper times and start points.
    Returns the normalized first and second derivative estimates.
    """
    accs = run_ensemble(_PlatesJob(replace(config, derivative="energy"), fd_delta=delta),
                        config.n_paths, config.seed, config.workers)
    _check(accs, config)
    extra = {"fd_delta": delta}
    return (_result(accs[COL_FD1], _oracle(config, "force"), extra),
            _result(accs[COL_FD2], _oracle(config, "curvature"), extra))


@dataclass
class TorqueEstimate:
    """Mean torque on the lower plate about ``pivot``.

    ``lever`` is the vector from the pivot to the path sources, ``expected``
    equals ``lever x (force e_z)`` and ``offset`` is the paired difference
    ``torque - expected`` with its standard error (zero for an unbiased
    estimator).
    """

    torque: np.ndarray
    stderr: np.ndarray
    force: PointResult
    lever: np.ndarray
    expected: np.ndarray
    offset: np.ndarray
    offset_stderr: np.ndarray


def plates_torque(config: PlatesConfig) -> TorqueEstimate:
    """Torque of the lower-plate force about ``config.pivot``."""
    cfg = replace(config, derivative="torque")
    accs = run_ensemble(_PlatesJob(cfg), cfg.n_paths, cfg.seed, cfg.workers)
    _check(accs, cfg)
    torque = np.array([accs[k].mean for k in (COL_TX, COL_TY, COL_TZ)])
    err = np.array([accs[k].stderr for k in (COL_TX, COL_TY, COL_TZ)])
    force = _result(accs[COL_F1], _oracle(cfg, "force") if cfg.chi_hat else 0.0, {})
    lever = -np.asarray(cfg.pivot, dtype=float)
    expected = np.cross(lever, [0.0, 0.0, force.estimate])
    # torque - lever x f is the torque about the source point, estimated on the same paths
    origin = run_ensemble(_PlatesJob(replace(cfg, pivot=(0.0, 0.0, 0.0))), cfg.n_paths,
                          cfg.seed, cfg.workers) if any(cfg.pivot) else accs
    offset = np.array([origin[k].mean for k in (COL_TX, COL_TY, COL_TZ)])
    offset_err = np.array([origin[k].stderr for k in (COL_TX, COL_TY, COL_TZ)])
    return TorqueEstimate(torque, err, force, lever, expected, offset, offset_err)


def run_point(template: PlatesConfig, observable: str, axis: str, x: float, n_paths: int,
              seed: int, workers=None) -> PointResult:
    """One sweep point: ``axis`` is ``pa_fraction`` (m/N) or ``fd_delta`` (delta/d)."""
    if observable not in ("energy", "force", "curvature"):
        raise ValueError("plate sweeps support energy, force and curvature")
    cfg = replace(template, n_paths=n_paths, seed=seed, workers=workers, derivative="energy")
    if axis == "pa_fraction":
        m = max(1, int(round(x * cfg.n_steps)))
        return plates_run(replace(cfg, pa_m=m))[observable]
    if axis == "fd_delta":
        if observable == "energy":
            raise ValueError("fd_delta sweeps need a derivative observable")
        first, second = plates_fd(cfg, float(x))
        return first if observable == "force" else second
    raise ValueError(f"unknown axis {axis!r}")
