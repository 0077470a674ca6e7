"""Ensemble orchestration, mergeable statistics, sweeps and error-floor fits.

Paths are processed in fixed-size blocks of consecutive stream ids. Each
block is reduced to per-observable accumulators, and blocks are merged in a
fixed binary tree, so results do not depend on the number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numba import njit

DEFAULT_BLOCK = 4096


@dataclass
class EnsembleAccumulator:
    """Running count, mean and sum of squared deviations of one observable."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    skipped: int = 0

    def add(self, x: float) -> None:
        if not math.isfinite(x):
            self.skipped += 1
            return
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        """Return the accumulator of the union of both sample sets."""
        n = self.count + other.count
        skipped = self.skipped + other.skipped
        if self.count == 0:
            return EnsembleAccumulator(other.count, other.mean, other.m2, skipped)
        if other.count == 0:
            return EnsembleAccumulator(self.count, self.mean, self.m2, skipped)
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        return EnsembleAccumulator(n, mean, m2, skipped)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else math.nan

    @property
    def stderr(self) -> float:
        if self.count < 2:
            return math.nan
        return math.sqrt(self.m2 / self.count) / math.sqrt(self.count - 1)

    @classmethod
    def from_samples(cls, values) -> "EnsembleAccumulator":
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        return cls(*_welford_columns(values)[0])

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "m2": self.m2,
                "skipped": self.skipped, "stderr": self.stderr}


@njit(cache=True)
def _welford_block(values):
    k = values.shape[1]
    out = np.zeros((k, 4))
    for c in range(k):
        n = 0
        mean = 0.0
        m2 = 0.0
        skipped = 0
        for i in range(values.shape[0]):
            x = values[i, c]
            if not np.isfinite(x):
                skipped += 1
                continue
            n += 1
            delta = x - mean
            mean += delta / n
            m2 += delta * (x - mean)
        out[c, 0] = n
        out[c, 1] = mean
        out[c, 2] = m2
        out[c, 3] = skipped
    return out


def _welford_columns(values: np.ndarray):
    raw = _welford_block(np.ascontiguousarray(values, dtype=np.float64))
    return [(int(r[0]), float(r[1]), float(r[2]), int(r[3])) for r in raw]


def tree_merge(accumulators: Sequence[EnsembleAccumulator]) -> EnsembleAccumulator:
    """Merge in a fixed pairwise order (0,1), (2,3), ... repeated to the root."""
    level = list(accumulators)
    if not level:
        return EnsembleAccumulator()
    while len(level) > 1:
        nxt = [level[i].merge(level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def default_workers() -> int:
    """Worker count from ``WORLDLINE_WORKERS``, else 1."""
    try:
        return max(1, int(os.environ.get("WORLDLINE_WORKERS", "1")))
    except ValueError:
        return 1


def run_ensemble(job: Callable[[int, int, int], np.ndarray], n_paths: int, seed: int,
                 workers: int | None = None, block_size: int = DEFAULT_BLOCK):
    """Evaluate ``job`` over stream ids ``[0, n_paths)`` and accumulate.

    Parameters
    ----------
    job : callable
        ``job(seed, start, stop)`` returns per-path values with shape
        ``(stop - start,)`` or ``(stop - start, k)``. Non-finite entries are
        counted as skipped.
    n_paths : int
    seed : int
    workers : int, optional
        Thread count; defaults to :func:`default_workers`. Jobs are expected
        to release the GIL.
    block_size : int
        Paths per block. Part of the reproducibility contract: results are
        identical for any worker count at fixed block size.

    Returns
    -------
    EnsembleAccumulator or list of EnsembleAccumulator
        One accumulator for 1-D jobs, one per column otherwise.
    """
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    workers = default_workers() if workers is None else max(1, int(workers))
    starts = list(range(0, n_paths, block_size))
    one_d = []

    def run_block(start):
        stop = min(start + block_size, n_paths)
        values = np.asarray(job(seed, start, stop), dtype=np.float64)
        if values.shape[0] != stop - start:
            raise ValueError("job returned the wrong number of paths")
        if values.ndim == 1:
            one_d.append(True)
            values = values[:, None]
        return [EnsembleAccumulator(*t) for t in _welford_columns(values)]

    if workers == 1 or len(starts) == 1:
        blocks = [run_block(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run_block, starts))
    columns = [tree_merge([b[c] for b in blocks]) for c in range(len(blocks[0]))]
    return columns[0] if one_d else columns


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepPlan:
    """Points along one method-parameter axis for a fixed observable.

    ``observable`` is one of ``cp_derivative``, ``plates_energy``,
    ``plates_force``, ``plates_curvature``; ``axis`` is ``fd_delta`` or
    ``pa_fraction``.
    """

    observable: str
    axis: str
    points: list
    paths_per_point: int
    shared_seed: bool = True

    def __post_init__(self):
        if self.axis not in ("fd_delta", "pa_fraction"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        pts = list(self.points)
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("sweep points must be strictly increasing")


def point_seed(seed: int, index: int, shared: bool) -> int:
    """Seed for sweep point ``index``: the base seed, or a hashed independent one."""
    if shared:
        return int(seed)
    x = (int(seed) * 0x9E3779B97F4A7C15 + (index + 1) * 0xBF58476D1CE4E5B9) & ((1 << 64) - 1)
    x ^= x >> 31
    return x


def sweep(plan: SweepPlan, template, workers: int | None = None) -> list[dict]:
    """Run every point of ``plan`` and tabulate estimate, error and oracle.

    ``template`` is a :class:`~worldline.cp_engine.CpConfig` for
    ``cp_derivative`` or a :class:`~worldline.plates_engine.PlatesConfig`
    for the plate observables.
    """
    from . import cp_engine, plates_engine  # deferred: engines import this module

    rows = []
    for i, x in enumerate(plan.points):
        seed = point_seed(template.seed, i, plan.shared_seed)
        row = {"axis": plan.axis, "axis_value": float(x), "observable": plan.observable,
               "seed": seed, "flag": ""}
        try:
            if plan.observable == "cp_derivative":
                res = cp_engine.run_point(template, plan.axis, x, plan.paths_per_point, seed, workers)
            elif plan.observable.startswith("plates_"):
                res = plates_engine.run_point(template, plan.observable[len("plates_"):],
                                              plan.axis, x, plan.paths_per_point, seed, workers)
            else:
                raise ValueError(f"unknown observable {plan.observable!r}")
        except (ValueError, ArithmeticError) as exc:
            row.update(estimate=math.nan, stderr=math.nan, oracle=math.nan, rel_err=math.nan,
                       flag=f"error: {exc}")
            rows.append(row)
            continue
        row["estimate"] = res.estimate
        row["stderr"] = res.stderr
        try:
            oracle = float(res.oracle)
            row["oracle"] = oracle
            row["rel_err"] = abs(res.estimate - oracle) / abs(oracle)
        except (TypeError, ValueError, ArithmeticError, ZeroDivisionError) as exc:
            row.update(oracle=math.nan, rel_err=math.nan, flag=f"oracle failed: {exc}")
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# error-floor fits

@dataclass
class ErrorFloorFit:
    """Power law on the statistical side, quadratic in log-log on the systematic side."""

    small_side: tuple
    large_side: tuple
    crossing: float | None
    floor: float | None
    small_range: tuple = field(default=())
    large_range: tuple = field(default=())

    @property
    def has_crossing(self) -> bool:
        return self.crossing is not None

    def to_dict(self) -> dict:
        return {"fit_a": self.small_side[0], "fit_exponent": self.small_side[1],
                "quad_c0": self.large_side[0], "quad_c1": self.large_side[1],
                "quad_c2": self.large_side[2],
                "crossing": self.crossing, "floor": self.floor,
                "small_range": list(self.small_range), "large_range": list(self.large_range)}


def _table_xy(table, value_key):
    if isinstance(table, tuple) and len(table) == 2:
        x, y = table
    else:
        x = [r["axis_value"] for r in table]
        y = [r[value_key] for r in table]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    return x[keep], y[keep]


def fit_error_floor(table, split_hint: float, small_range: tuple | None = None,
                    large_range: tuple | None = None, value_key: str = "rel_err",
                    fixed_exponent: float | None = None) -> ErrorFloorFit:
    """Fit both sides of an error curve and intersect the fits.

    Parameters
    ----------
    table : list of dict or (x, y)
        Sweep rows (``axis_value`` and ``value_key``) or raw arrays.
    split_hint : float
        Points with ``x <= split_hint`` form the small side, the rest the
        large side, unless explicit ranges are given.
    small_range, large_range : (lo, hi), optional
        Inclusive axis ranges overriding the split.
    fixed_exponent : float, optional
        Hold the small-side exponent fixed and fit only the amplitude.
    """
    x, y = _table_xy(table, value_key)
    lx, ly = np.log(x), np.log(y)
    small = (x <= split_hint) if small_range is None else (x >= small_range[0]) & (x <= small_range[1])
    large = (x > split_hint) if large_range is None else (x >= large_range[0]) & (x <= large_range[1])
    if small.sum() < 3 or large.sum() < 3:
        raise ValueError("need at least 3 points on each side of the split")
    if fixed_exponent is None:
        k, loga = np.polyfit(lx[small], ly[small], 1)
    else:
        k = float(fixed_exponent)
        loga = float(np.mean(ly[small] - k * lx[small]))
    c2, c1, c0 = np.polyfit(lx[large], ly[large], 2)
    lo, hi = lx.min(), lx.max()
    # solve loga + k L = c0 + c1 L + c2 L^2 inside the swept range
    diff = np.array([c2, c1 - k, c0 - loga])
    grid = np.linspace(lo, hi, 64)
    gap = np.abs(np.polyval(diff, grid))
    if k >= 0 or gap.max() < 1e-6 * max(1.0, np.abs(ly).max()):
        # no decreasing statistical branch, or both fits describe the same curve
        roots = []
    else:
        roots = np.roots(diff) if c2 != 0 else np.array([(loga - c0) / (c1 - k)])
        roots = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12 and lo <= r.real <= hi]
    crossing = floor = None
    if roots:
        # prefer the root nearest the split
        L = min(roots, key=lambda r: abs(r - math.log(split_hint)))
        crossing = float(math.exp(L))
        floor = float(math.exp(loga + k * L))
    s_rng = (float(x[small].min()), float(x[small].max()))
    l_rng = (float(x[large].min()), float(x[large].max()))
    return ErrorFloorFit((float(math.exp(loga)), float(k)), (float(c0), float(c1), float(c2)),
                         crossing, floor, s_rng, l_rng)


@dataclass
class PointResult:
    """Estimate of one observable at one method setting."""

    estimate: float
    stderr: float
    oracle: float
    accumulator: EnsembleAccumulator
    extra: dict = field(default_factory=dict)

    @property
    def rel_err(self) -> float:
        return abs(self.estimate - self.oracle) / abs(self.oracle) if self.oracle else math.nan

    def replace(self, **kw) -> "PointResult":
        return replace(self, **kw)
