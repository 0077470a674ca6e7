import math

import numpy as np
import pytest
from scipy import integrate, special

from worldline import analytic
from worldline.analytic import LocalTimeParams, SingularInputError


# ---------------------------------------------------------------------------
# Hermite polynomials

@pytest.mark.parametrize("x", [-2.3, 0.0, 0.7, 5.0])
def test_hermite_zero_order_is_one(x):
    assert analytic.hermite(0, x) == 1.0


def test_hermite_two_at_origin():
    assert analytic.hermite(2, 0.0) == -2.0


def test_hermite_four_matches_polynomial():
    x = 1.5
    assert analytic.hermite(4, x) == pytest.approx(16 * x**4 - 48 * x**2 + 12, abs=1e-12)
    assert analytic.hermite(4, x) == pytest.approx(-15.0, abs=1e-12)


def test_hermite_rodrigues_convention():
    # d^n/dx^n exp(-x^2) = (-1)^n H_n(x) exp(-x^2), checked against scipy
    for n in range(13):
        for x in (-1.1, 0.3, 2.4):
            assert analytic.hermite(n, x) == pytest.approx(special.eval_hermite(n, x), rel=1e-12)


@pytest.mark.parametrize("n", [-1, 13, 2.5])
def test_hermite_order_out_of_range(n):
    with pytest.raises(ValueError):
        analytic.hermite(n, 0.0)


# ---------------------------------------------------------------------------
# crossing probability and averaging fraction

def test_crossing_probability_small_argument_tends_to_one():
    assert analytic.crossing_probability(1e-12, 1.0) == pytest.approx(1.0, abs=1e-11)


def test_crossing_probability_unit_argument():
    # d / sqrt(2 tau) = 1
    assert analytic.crossing_probability(math.sqrt(2.0), 1.0) == pytest.approx(0.157299, abs=1e-6)


@pytest.mark.parametrize("tau", [0.01, 0.05, 0.1])
def test_crossing_probability_gaussian_bound(tau):
    assert analytic.crossing_probability(1.0, tau) <= math.exp(-1.0 / (2 * tau))


def test_averaging_fraction_examples():
    assert analytic.averaging_fraction(1.0, 1.0, math.exp(-8)) == pytest.approx(1 / 16, rel=1e-14)
    assert analytic.averaging_fraction(0.5, 2.0, 1e-4) == pytest.approx(0.006786, abs=1e-6)


def test_averaging_fraction_quadratic_in_scale():
    a = analytic.averaging_fraction(0.3, 1.7, 1e-6)
    assert analytic.averaging_fraction(0.6, 1.7, 1e-6) == pytest.approx(4 * a, rel=1e-14)


@pytest.mark.parametrize("args", [(0.0, 1.0, 0.5), (1.0, -1.0, 0.5), (1.0, 1.0, 1.0)])
def test_averaging_fraction_rejects_bad_input(args):
    with pytest.raises(ValueError):
        analytic.averaging_fraction(*args)


# ---------------------------------------------------------------------------
# half-space efficiency

def test_eta_perfect_conductor_limit():
    assert analytic.eta_te(math.inf) == 1 / 6
    assert analytic.eta_te(1e12) == pytest.approx(1 / 6, rel=1e-5)


def test_eta_unit_susceptibility_closed_form():
    expected = 1 / 6 + 1 - math.sqrt(2) / 2 - math.log(1 + math.sqrt(2)) / 2
    assert analytic.eta_te(1.0) == pytest.approx(expected, rel=1e-14)


def test_eta_weak_coupling_ratio_at_one_thousandth():
    assert analytic.eta_te(1e-3) / 1e-3 == pytest.approx(0.025, rel=1e-4)


def test_eta_weak_coupling_limit():
    assert analytic.eta_te(1e-5) / 1e-5 == pytest.approx(0.025, rel=1e-4)


def test_eta_series_matches_high_precision_reference():
    # 40-digit evaluation of the closed form at chi = 1e-3
    assert analytic.eta_te(1e-3) == pytest.approx(2.4991075e-05, rel=1e-7)


def test_eta_series_and_closed_form_join():
    lo = analytic.eta_te(1e-3 * (1 - 1e-12))
    hi = analytic.eta_te(1e-3 * (1 + 1e-12))
    assert lo == pytest.approx(hi, rel=1e-9)


def test_eta_is_bounded_increasing():
    chis = np.logspace(-6, 6, 61)
    vals = np.array([analytic.eta_te(c) for c in chis])
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) > 0)
    assert np.all(vals < 1 / 6)
    assert analytic.eta_te(0.0) == 0.0


def test_eta_rejects_negative():
    with pytest.raises(ValueError):
        analytic.eta_te(-1.0)


# ---------------------------------------------------------------------------
# two-plate efficiency

def test_gamma_limits():
    assert analytic.gamma_te(0.0) == 0.0
    assert analytic.gamma_te(math.inf) == 0.5
    assert analytic.gamma_te(1e5) == pytest.approx(0.5, abs=0.006)


def test_gamma_weak_coupling_approaches_quadratic_law():
    ratios = [analytic.gamma_te(x) / (27 * x * x / (4 * math.pi**4)) for x in (1e-2, 1e-3, 1e-4)]
    devs = [abs(r - 1) for r in ratios]
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-3


def test_gamma_depends_on_ratio_only():
    assert analytic.gamma_te(2.0, 4.0) == pytest.approx(analytic.gamma_te(0.5, 1.0), rel=1e-12)


def test_gamma_matches_direct_quadrature():
    # original variables: xi in (0, inf), p in (1, inf), exponent exp(-2 p xi)
    x = 1.0

    def inner(xi):
        def f(p):
            r = -xi * x / (2 * p + xi * x)
            return p * math.log1p(-r * r * math.exp(-2 * p * xi))
        return integrate.quad(f, 1, np.inf, epsabs=1e-14, epsrel=1e-11)[0]

    val = integrate.quad(lambda xi: xi * xi * inner(xi), 0, np.inf, epsabs=1e-14, epsrel=1e-10)[0]
    assert analytic.gamma_te(1.0) == pytest.approx(-180 / math.pi**4 * val, rel=1e-7)


def test_gamma_is_bounded_increasing():
    xs = np.logspace(-3, 4, 29)
    vals = np.array([analytic.gamma_te(x) for x in xs])
    assert np.all(np.diff(vals) > 0)
    assert np.all((vals > 0) & (vals < 0.5))


@pytest.mark.parametrize("order", [1, 2])
def test_gamma_derivatives_vanish_without_plates(order):
    assert analytic.gamma_te_derivatives(0.0, 1.0, order) == 0.0


@pytest.mark.parametrize("order", [1, 2])
def test_gamma_derivatives_strong_coupling(order):
    assert analytic.gamma_te_derivatives(math.inf, 1.0, order) == 0.5
    g = analytic.gamma_te(1e5)
    assert analytic.gamma_te_derivatives(1e5, 1.0, order) / g == pytest.approx(1.0, abs=0.02)


def test_gamma_first_derivative_matches_central_difference():
    d, h = 1.0, 1e-5

    def G(dd):
        return analytic.gamma_te(1.0, dd) / dd**3

    fd = (G(d + h) - G(d - h)) / (2 * h) / (-3 * d**-4)
    assert analytic.gamma_te_derivatives(1.0, d, 1) == pytest.approx(fd, rel=1e-6)


def test_gamma_second_derivative_matches_central_difference():
    d, h = 1.0, 1e-3

    def G(dd):
        return analytic.gamma_te(1.0, dd) / dd**3

    fd = (G(d + h) - 2 * G(d) + G(d - h)) / h**2 / (12 * d**-5)
    assert analytic.gamma_te_derivatives(1.0, d, 2) == pytest.approx(fd, rel=1e-5)


def test_gamma_rejects_too_few_nodes():
    with pytest.raises(ValueError):
        analytic.gamma_te(1.0, 1.0, nodes=16)


# ---------------------------------------------------------------------------
# local time

def test_local_time_atom_weight():
    _, atom = analytic.local_time_density(LocalTimeParams(0.0, 0.0, 1.0, 1.0), 0.0)
    assert atom == pytest.approx(1 - math.exp(-2), rel=1e-14)
    assert atom == pytest.approx(0.864665, abs=1e-6)


def test_local_time_density_at_zero():
    a, b, d, t = 0.3, -0.4, 0.8, 0.7
    B = abs(a - d) + abs(b - d)
    dens, _ = analytic.local_time_density(LocalTimeParams(a, b, d, t), 0.0)
    assert dens == pytest.approx(B / t * math.exp(((b - a) ** 2 - B * B) / (2 * t)), rel=1e-14)


@pytest.mark.parametrize("a,b,d,t", [(0.0, 0.0, 1.0, 1.0), (0.2, 0.9, 0.5, 0.3), (-1.0, 0.5, 0.1, 2.0)])
def test_local_time_total_mass(a, b, d, t):
    p = LocalTimeParams(a, b, d, t)
    cont = integrate.quad(lambda x: analytic.local_time_density(p, x)[0], 0, np.inf,
                          epsabs=1e-13, epsrel=1e-12)[0]
    assert cont + analytic.local_time_density(p, 0.0)[1] == pytest.approx(1.0, abs=1e-10)


def test_local_time_mgf_at_zero_conjugate():
    assert analytic.local_time_mgf(LocalTimeParams(0.1, 0.5, 0.3, 0.2, 0.0)) == 1.0


def test_local_time_mgf_on_level_closed_form():
    p = LocalTimeParams(0.0, 0.0, 0.0, 1.0, 1.0)
    closed = 1 - math.sqrt(math.pi / 2) * math.exp(0.5) * special.erfc(1 / math.sqrt(2))
    assert analytic.local_time_mgf(p) == pytest.approx(closed, rel=1e-14)
    assert analytic.local_time_mgf(p) == pytest.approx(0.3446, abs=5e-4)


def test_local_time_mgf_matches_fine_bridge_simulation():
    # local time at 0 of a unit bridge from 0 to 0 via the occupation of a thin band
    rng = np.random.default_rng(7)
    n, paths, h = 4000, 4000, 0.01
    dt = 1.0 / n
    vals = np.empty(paths)
    t = np.arange(n + 1) * dt
    for k in range(paths):
        w = np.concatenate(([0.0], np.cumsum(rng.normal(0.0, math.sqrt(dt), n))))
        b = w - t * w[-1]
        ell = np.sum(np.abs(b[1:]) < h) * dt / (2 * h)
        vals[k] = math.exp(-ell)
    exact = analytic.local_time_mgf(LocalTimeParams(0.0, 0.0, 0.0, 1.0, 1.0))
    err = vals.std(ddof=1) / math.sqrt(paths)
    # band width and time step bias the estimate upward by O(h + sqrt(dt))
    assert abs(vals.mean() - exact) < 4 * err + 0.02


@pytest.mark.parametrize("a,b,d,t,s", [(0.2, 0.7, 0.5, 0.1, 3.0), (1.3, 0.4, -0.2, 1.0, 0.5),
                                       (0.0, 0.0, 0.0, 2.0, 10.0)])
def test_local_time_mgf_matches_density_transform(a, b, d, t, s):
    p = LocalTimeParams(a, b, d, t, s)
    cont = integrate.quad(lambda x: analytic.local_time_density(p, x)[0] * math.exp(-s * x),
                          0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
    assert analytic.local_time_mgf(p) == pytest.approx(cont + analytic.local_time_density(p, 0)[1],
                                                       abs=1e-8)


def test_local_time_mgf_grid_consistency():
    worst = 0.0
    for a in np.linspace(-0.5, 0.5, 5):
        for t in np.linspace(0.1, 2.0, 5):
            for s in (0.3, 2.0, 8.0):
                p = LocalTimeParams(a, 0.2, 0.1, t, s)
                cont = integrate.quad(lambda x: analytic.local_time_density(p, x)[0] * math.exp(-s * x),
                                      0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
                direct = cont + analytic.local_time_density(p, 0.0)[1]
                worst = max(worst, abs(direct - analytic.local_time_mgf(p)))
    assert worst < 1e-8


def test_local_time_mgf_no_overflow_at_large_argument():
    p = LocalTimeParams(0.0, 0.0, 0.0, 4.0, 100.0)  # s t = 400
    val = analytic.local_time_mgf(p)
    assert math.isfinite(val) and 0 < val < 1e-2


def test_local_time_mgf_monotone():
    base = dict(a=0.1, b=0.3, d=0.0, t=0.5)
    s_vals = [analytic.local_time_mgf(LocalTimeParams(**base, s=s)) for s in (0.1, 1.0, 5.0, 20.0)]
    assert np.all(np.diff(s_vals) < 0)
    far = [analytic.local_time_mgf(LocalTimeParams(a, a, 0.0, 0.5, 2.0)) for a in (0.05, 0.2, 0.6)]
    assert np.all(np.diff(far) > 0)
    assert all(0 < v <= 1 for v in s_vals + far)


@pytest.mark.parametrize("order", [1, 2])
def test_local_time_derivative_vanishes_at_zero_conjugate(order):
    assert analytic.local_time_mgf_dd(LocalTimeParams(0.2, 0.3, 0.0, 0.05, 0.0), order) == 0.0


def test_local_time_derivative_reflection_odd():
    p = LocalTimeParams(0.2, 0.5, 0.0, 0.3, 2.0)
    q = LocalTimeParams(-0.2, -0.5, 0.0, 0.3, 2.0)
    assert analytic.local_time_mgf_dd(q, 1) == pytest.approx(-analytic.local_time_mgf_dd(p, 1), rel=1e-14)


def test_local_time_derivative_matches_central_difference():
    a, b, d, t, s = 0.2, 0.3, 0.0, 0.05, 1.0
    h = 1e-6
    fd = (analytic.local_time_mgf(LocalTimeParams(a, b, d + h, t, s))
          - analytic.local_time_mgf(LocalTimeParams(a, b, d - h, t, s))) / (2 * h)
    assert analytic.local_time_mgf_dd(LocalTimeParams(a, b, d, t, s), 1) == pytest.approx(fd, rel=1e-6)


def test_local_time_second_derivative_matches_central_difference():
    a, b, d, t, s = 0.2, 0.3, 0.0, 0.05, 1.0
    h = 1e-4
    f = [analytic.local_time_mgf(LocalTimeParams(a, b, d + k * h, t, s)) for k in (-1, 0, 1)]
    fd = (f[0] - 2 * f[1] + f[2]) / h**2
    assert analytic.local_time_mgf_dd(LocalTimeParams(a, b, d, t, s), 2) == pytest.approx(fd, rel=1e-5)


def test_local_time_derivative_singular_on_level():
    with pytest.raises(SingularInputError):
        analytic.local_time_mgf_dd(LocalTimeParams(0.0, 0.3, 0.0, 0.1, 1.0), 1)


def test_local_time_params_need_positive_duration():
    with pytest.raises(ValueError):
        LocalTimeParams(0.0, 0.0, 0.0, 0.0, 1.0)
