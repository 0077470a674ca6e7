"""Fast oracle and property checks behind ``worldline selftest``."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from . import analytic
from .rng import RngStream
from .stochastic import generate_closed_bridge, hermite_eta_inverse


def _eta_checks(eta):
    out = []
    out.append(("eta_perfect_conductor", abs(eta(math.inf) - 1 / 6) < 1e-15,
                f"eta_te(inf) = {eta(math.inf):.15g}"))
    r = eta(1e-5) / 1e-5
    out.append(("eta_weak_coupling", abs(r * 40 - 1) < 1e-4, f"eta_te(1e-5)/1e-5 = {r:.10g}"))
    x = 1e-3
    a, b = eta(x * (1 - 1e-12)), eta(x * (1 + 1e-12))
    out.append(("eta_series_join", abs(a - b) <= 1e-6 * abs(b),
                f"series {a:.12g} vs closed form {b:.12g}"))
    grid = np.logspace(-4, 4, 33)
    vals = np.array([eta(c) for c in grid])
    out.append(("eta_monotone", bool(np.all(np.diff(vals) > 0) and vals[-1] < 1 / 6),
                "increasing and below 1/6 on [1e-4, 1e4]"))
    return out


def _gamma_checks():
    out = []
    xs = (1e-2, 1e-3, 1e-4)
    ratios = [analytic.gamma_te(x) / (27 * x * x / (4 * math.pi**4)) for x in xs]
    ok = all(abs(b - 1) < abs(a - 1) for a, b in zip(ratios, ratios[1:])) and abs(ratios[-1] - 1) < 1e-3
    out.append(("gamma_weak_coupling", ok,
                "ratio to 27x^2/4pi^4: " + ", ".join(f"{x:g}: {r:.6f}" for x, r in zip(xs, ratios))))
    gaps = [0.5 - analytic.gamma_te(x) for x in (1e3, 1e5)]
    slope = math.log(gaps[1] / gaps[0]) / math.log(100.0)
    out.append(("gamma_strong_coupling", all(g > 0 for g in gaps) and abs(slope + 0.5) < 0.05,
                f"1/2 - gamma ~ x^{slope:.3f} between 1e3 and 1e5"))
    return out


def _hermite_check():
    worst = 0.0
    for n in range(7):
        val, _ = integrate.quad(lambda z: abs(analytic.hermite(n, z)) * math.exp(-z * z),
                                -np.inf, np.inf, limit=200)
        worst = max(worst, abs(hermite_eta_inverse(n) - val / math.sqrt(math.pi)) / (val / math.sqrt(math.pi)))
    return ("hermite_normalization", worst < 1e-8, f"max relative deviation {worst:.2e} for n <= 6")


def _mgf_checks():
    worst = 0.0
    for a in (0.2, 0.7, 1.3):
        for t in (0.1, 1.0):
            for s in (0.5, 3.0):
                p = analytic.LocalTimeParams(a=a, b=0.4, d=1.0, t=t, s=s)
                dens, _ = integrate.quad(lambda x: analytic.local_time_density(p, x)[0] * math.exp(-s * x),
                                         0, np.inf, epsabs=1e-13, epsrel=1e-12)
                direct = analytic.local_time_density(p, 0.0)[1] + dens
                worst = max(worst, abs(direct - analytic.local_time_mgf(p)))
    out = [("mgf_density_transform", worst < 1e-8, f"max deviation {worst:.2e}")]
    p = analytic.LocalTimeParams(a=0.3, b=0.6, d=0.9, t=0.5, s=2.0)
    h = 1e-5
    fd = (analytic.local_time_mgf(analytic.LocalTimeParams(0.3, 0.6, 0.9 + h, 0.5, 2.0))
          - analytic.local_time_mgf(analytic.LocalTimeParams(0.3, 0.6, 0.9 - h, 0.5, 2.0))) / (2 * h)
    d1 = analytic.local_time_mgf_dd(p, 1)
    out.append(("mgf_level_derivative", abs(fd - d1) < 1e-7 * max(1.0, abs(d1)),
                f"analytic {d1:.10g} vs central difference {fd:.10g}"))
    return out


def _bridge_check():
    n, paths = 16, 20_000
    rng = RngStream(2024, 0)
    samples = np.array([generate_closed_bridge(n, 1.0, rng.child(k)).samples for k in range(paths)])
    t = np.arange(n + 1) / n
    exact = np.minimum.outer(t, t) - np.outer(t, t)
    emp = samples.T @ samples / paths
    var_emp = (samples**2).T @ (samples**2) / paths - emp**2
    inner = slice(1, n)
    z = np.abs(emp - exact)[inner, inner] / np.sqrt(var_emp[inner, inner] / paths)
    return ("bridge_covariance", float(z.max()) < 5.0,
            f"max |z| = {z.max():.2f} over the {(n - 1) ** 2} interior covariances")


def run_selftests(mutate: str = "none") -> list[tuple[str, bool, str]]:
    """Run every check and return ``(name, passed, detail)`` triples.

    ``mutate = "eta-sign"`` flips the sign of the half-space efficiency seen
    by the checks, which must then fail.
    """
    if mutate == "eta-sign":
        def eta(chi):
            return -analytic.eta_te(chi)
    elif mutate == "none":
        eta = analytic.eta_te
    else:
        raise ValueError(f"unknown mutation {mutate!r}")
    results = []
    results += _eta_checks(eta)
    results += _gamma_checks()
    results.append(_hermite_check())
    results += _mgf_checks()
    results.append(_bridge_check())
    return results
