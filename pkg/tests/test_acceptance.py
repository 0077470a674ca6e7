"""End-to-end acceptance checks at desk-scale ensembles.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary. The Monte Carlo checks take about an hour in total on one core.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from worldline import analytic
from worldline.analytic import LocalTimeParams
from worldline.cp_engine import (CpConfig, DerivativeSpec, cp_derivative_fd, cp_derivative_fd_multi,
                                 cp_derivative_pa, cp_potential)
from worldline.plates_engine import (PlatesConfig, path_kernels, plates_energy, plates_run,
                                     plates_torque, sample_kernel,
                                     segment_factors)
from worldline.rng import RngStream
from worldline.stochastic import generate_closed_bridge, generate_open_bridge

pytestmark = pytest.mark.slow


def _z(res, oracle):
    return (res.estimate - oracle) / res.stderr


# ---------------------------------------------------------------------------
# 1. analytic oracles

def test_criterion_1_oracles(report):
    t0 = time.perf_counter()
    checks = []
    eta1 = analytic.eta_te(1.0)
    checks.append((abs(eta1 - 0.018899) <= 1e-6, f"eta_te(1)={eta1:.7f} (want 0.018899+-1e-6)"))
    r = analytic.eta_te(1e-6) / 1e-6
    checks.append((abs(40 * r - 1) <= 1e-4, f"eta_te(1e-6)/1e-6={r:.8f}"))
    g = analytic.gamma_te(1e-3) / (27e-6 / (4 * math.pi**4))
    checks.append((abs(g - 1) <= 1e-3, f"gamma ratio at 1e-3={g:.6f}"))
    g3 = analytic.gamma_te(1e3)
    checks.append((g3 >= 0.49, f"gamma_te(1e3)={g3:.4f} (want >= 0.49)"))
    worst = 0.0
    for a in np.linspace(-0.5, 0.5, 5):
        for t in np.linspace(0.1, 2.0, 5):
            for s in (0.3, 2.0, 8.0):
                p = LocalTimeParams(a, 0.2, 0.1, t, s)
                cont = integrate.quad(lambda x: analytic.local_time_density(p, x)[0] * math.exp(-s * x),
                                      0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
                worst = max(worst, abs(cont + analytic.local_time_density(p, 0.0)[1]
                                       - analytic.local_time_mgf(p)))
    checks.append((worst < 1e-8, f"MGF grid max deviation {worst:.1e}"))
    ok = all(c for c, _ in checks)
    report("criterion 1", ok, "; ".join(d for _, d in checks) + f" [{time.perf_counter() - t0:.1f}s]")


# ---------------------------------------------------------------------------
# 2. bridge statistics

def test_criterion_2_bridges(report):
    n, paths = 64, 100_000
    x = np.array([generate_closed_bridge(n, 1.0, RngStream(21, k)).samples for k in range(paths)])
    worst = 0.0
    for i in range(8, n, 8):
        for j in range(i, n, 8):
            prod = x[:, i] * x[:, j]
            s, t = i / n, j / n
            worst = max(worst, abs(prod.mean() - (s - s * t)) / (prod.std(ddof=1) / math.sqrt(paths)))
    a, b = -0.5, 1.5
    y = np.array([generate_open_bridge(a, b, n, 1.0, RngStream(22, k)).samples for k in range(paths)])
    line = a + (b - a) * np.arange(n + 1) / n
    z = np.abs(y[:, 1:-1].mean(axis=0) - line[1:-1]) / (y[:, 1:-1].std(axis=0, ddof=1) / math.sqrt(paths))
    ok = worst < 4 and z.max() < 4
    report("criterion 2", ok, f"covariance max |z|={worst:.2f}, open-bridge mean max |z|={z.max():.2f}")


# ---------------------------------------------------------------------------
# 3. potential

@pytest.mark.parametrize("chi", [1.0, 100.0, math.inf])
def test_criterion_3_potential(report, chi):
    res = cp_potential(CpConfig(chi=chi, n_steps=10_000, sub_steps=100, n_paths=1_000_000, seed=31))
    oracle = analytic.eta_te(chi)
    z, rel = _z(res, oracle), res.stderr / oracle
    report(f"criterion 3 (chi={chi:g})", abs(z) <= 3 and rel <= 0.02,
           f"{res.estimate:.6f}+-{res.stderr:.6f} vs {oracle:.6f}, z={z:+.2f}, stderr {100 * rel:.2f}%")


# ---------------------------------------------------------------------------
# 4. first derivative, both methods

def test_criterion_4_first_derivative(report):
    chi, n = 100.0, 10_000
    base = CpConfig(chi=chi, n_steps=n, n_paths=1_000_000, seed=41)
    oracle = analytic.eta_te(chi)
    pa = cp_derivative_pa(replace(base, derivative=DerivativeSpec(order=1, pa_m=500)))
    fd = cp_derivative_fd(replace(base, seed=42, derivative=DerivativeSpec(order=1, method="fd",
                                                                           fd_delta=0.02)))
    matched = 100_000
    fd_m = cp_derivative_fd(replace(base, n_paths=matched, seed=43,
                                    derivative=DerivativeSpec(order=1, method="fd", fd_delta=0.02)))
    sweep = {f: cp_derivative_pa(replace(base, n_paths=matched, seed=44,
                                         derivative=DerivativeSpec(order=1, pa_m=round(f * n)))).stderr
             for f in (0.01, 0.03, 0.1, 0.2)}
    ok = abs(_z(pa, oracle)) <= 3 and abs(_z(fd, oracle)) <= 3 and min(sweep.values()) <= fd_m.stderr
    report("criterion 4", ok,
           f"PA {pa.estimate:.5f}+-{pa.stderr:.5f} z={_z(pa, oracle):+.2f}; "
           f"FD {fd.estimate:.5f}+-{fd.stderr:.5f} z={_z(fd, oracle):+.2f}; "
           f"stderr at {matched} paths: FD {fd_m.stderr:.5f}, PA "
           + ", ".join(f"m/N={f:g}: {e:.5f}" for f, e in sweep.items()))


# ---------------------------------------------------------------------------
# 5. second derivative at perfect coupling

def test_criterion_5_second_derivative(report):
    base = CpConfig(chi=math.inf, n_steps=100_000, sub_steps=1000, n_paths=1_000_000, seed=51)
    oracle = analytic.eta_te(math.inf)
    pa = cp_derivative_pa(replace(base, derivative=DerivativeSpec(order=2, pa_m=5000)))
    deltas = [0.01, 0.03, 0.1, 0.2, 0.3]
    fds = cp_derivative_fd_multi(replace(base, seed=52, derivative=DerivativeSpec(order=2, method="fd")),
                                 deltas)
    fd_err = [abs(r.estimate - oracle) / oracle for r in fds]
    ok = abs(_z(pa, oracle)) <= 3 and all(e > 0.05 for e in fd_err)
    report("criterion 5", ok,
           f"PA {pa.estimate:.5f}+-{pa.stderr:.5f} vs {oracle:.5f} z={_z(pa, oracle):+.2f}; FD rel err "
           + ", ".join(f"delta={d:g}: {100 * e:.1f}%" for d, e in zip(deltas, fd_err)))


# ---------------------------------------------------------------------------
# 6. partial-averaging error law

@pytest.mark.parametrize("order,chi,sub", [(1, 100.0, 1), (2, math.inf, 100)])
def test_criterion_6_error_scaling(report, order, chi, sub):
    pts = [0.003, 0.01, 0.03]
    n = 10_000
    base = CpConfig(chi=chi, n_steps=n, sub_steps=sub, n_paths=100_000, seed=61)
    errs = [cp_derivative_pa(replace(base, derivative=DerivativeSpec(order=order, pa_m=round(f * n)))).stderr
            for f in pts]
    slope = np.polyfit(np.log(pts), np.log(errs), 1)[0]
    target = -order / 2
    report(f"criterion 6 (n={order})", abs(slope - target) <= 0.2 * abs(target),
           f"slope {slope:.3f} vs {target:g}")


# ---------------------------------------------------------------------------
# 7. and 8. plates

@pytest.fixture(scope="module")
def plates_large():
    return plates_run(PlatesConfig(chi_hat=1.0, n_steps=1000, n_paths=10_000_000, pa_m=16, seed=71))


def test_criterion_7_plates_energy(report, plates_large):
    res = plates_large.energy
    oracle = analytic.gamma_te(1.0)
    rel = res.stderr / oracle
    report("criterion 7", abs(_z(res, oracle)) <= 3 and rel <= 0.03,
           f"{res.estimate:.6f}+-{res.stderr:.6f} vs {oracle:.6f}, z={_z(res, oracle):+.2f}, "
           f"stderr {100 * rel:.2f}%")


def test_criterion_8_plates_derivatives(report, plates_large):
    zs = {}
    for order, name in ((1, "force"), (2, "curvature")):
        res = plates_large[name]
        zs[name] = (_z(res, analytic.gamma_te_derivatives(1.0, 1.0, order)), res)
    cfg = PlatesConfig(chi_hat=1.0, n_steps=1000, pa_m=16)
    rng = np.random.default_rng(8)
    one_plate = violations = 0
    for k in range(10_000):
        kern = sample_kernel(RngStream(81, k), cfg)
        z = rng.uniform(0.0, cfg.d) + math.sqrt(kern.T) * generate_closed_bridge(
            cfg.n_steps, 1.0, RngStream(82, k)).samples
        plates = {f.plate for f in segment_factors(z, kern.T, kern.s, cfg) if f.d_value != 0.0}
        if len(plates) < 2:
            one_plate += 1
            k12 = path_kernels(z, kern.T, kern.s, cfg)
            violations += k12["dK1"] * k12["dK2"] != 0.0
    ok = all(abs(z) <= 3 for z, _ in zs.values()) and violations == 0
    report("criterion 8", ok,
           "; ".join(f"{n} {r.estimate:.5f}+-{r.stderr:.5f} z={z:+.2f}" for n, (z, r) in zs.items())
           + f"; one-plate paths {one_plate}/10000 with nonzero curvature weight: {violations}")


# ---------------------------------------------------------------------------
# 9. midplane reweighting

def test_criterion_9_midplane(report):
    base = PlatesConfig(chi_hat=1.0, n_steps=128, n_paths=1_000_000, pa_m=4)
    mid = plates_energy(replace(base, start="midplane", seed=91))
    brute = plates_energy(replace(base, start="window", seed=92))
    z = (mid.estimate - brute.estimate) / math.hypot(mid.stderr, brute.stderr)
    report("criterion 9", abs(z) <= 3,
           f"midplane {mid.estimate:.6f}+-{mid.stderr:.6f}, integrated start "
           f"{brute.estimate:.6f}+-{brute.stderr:.6f}, z={z:+.2f}")


# ---------------------------------------------------------------------------
# 10. torque

def test_criterion_10_torque(report):
    base = PlatesConfig(chi_hat=1.0, n_steps=1000, n_paths=200_000, pa_m=16, seed=101)
    on = plates_torque(replace(base, pivot=(0.0, 0.0, 0.0)))
    off = plates_torque(replace(base, pivot=(0.3, -0.2, 0.5)))
    z_on = np.where(on.stderr > 0, on.torque / np.where(on.stderr > 0, on.stderr, 1.0), 0.0)
    z_off = np.where(off.stderr > 0, (off.torque - off.expected) / np.where(off.stderr > 0, off.stderr, 1.0),
                     0.0)
    ok = np.all(np.abs(z_on) <= 3) and np.all(np.abs(z_off) <= 3) and np.any(off.expected != 0)
    report("criterion 10", bool(ok),
           f"pivot on plate z={np.round(z_on, 2).tolist()}; displaced pivot torque "
           f"{np.round(off.torque, 5).tolist()} vs r x F {np.round(off.expected, 5).tolist()}, "
           f"z={np.round(z_off, 2).tolist()}")


# ---------------------------------------------------------------------------
# 11. reproducibility across worker counts

def test_criterion_11_reproducibility(report):
    runs = {}
    for w in (1, 4, 8):
        cp = cp_potential(CpConfig(chi=10.0, n_steps=1000, n_paths=20_000, seed=111, workers=w)).accumulator
        pa = cp_derivative_pa(CpConfig(chi=10.0, n_steps=1000, n_paths=20_000, seed=112, workers=w,
                                       derivative=DerivativeSpec(order=2, pa_m=10))).accumulator
        pl = plates_run(PlatesConfig(chi_hat=1.0, n_steps=300, n_paths=20_000, pa_m=4, seed=113,
                                     workers=w)).curvature.accumulator
        runs[w] = [(a.count, a.mean, a.m2) for a in (cp, pa, pl)]
    ok = runs[1] == runs[4] == runs[8]
    report("criterion 11", ok, "cp potential, cp second derivative and plates curvature "
           + ("bit-identical" if ok else "differ") + " for workers 1, 4, 8")
