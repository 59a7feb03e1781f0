import math

import numpy as np
import pytest
from scipy.optimize import least_squares

from washboard import EnvironmentParams, JunctionParams
from washboard.analysis import EscapeRateCurve
from washboard.errors import ConvergenceError
from washboard.fitting import (
    escape_curve_model,
    fit_escape_curve,
    fit_linewidth,
    fit_spectrum,
    least_squares_engine,
    linewidth_components,
    numeric_jacobian,
    spectrum_model,
)
from washboard.rates import tunnel_rate

HIGH = JunctionParams(14.12e-6, 3.7e-12, 0.06)
BAND = np.linspace(13.88e-6, 14.00e-6, 9)


def rosenbrock(q):
    return np.array([10.0 * (q[1] - q[0] ** 2), 1.0 - q[0]])


# --- engine ------------------------------------------------------------------

def test_linear_problem_solved_in_one_step():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 3))
    b = rng.normal(size=30)
    res = least_squares_engine(lambda x: a @ x - b, np.zeros(3))
    exact = np.linalg.lstsq(a, b, rcond=None)[0]
    assert res.values == pytest.approx(exact, rel=1e-8, abs=1e-10)
    assert res.iterations <= 2
    assert res.covariance == pytest.approx(np.linalg.inv(a.T @ a), rel=1e-5)
    assert res.dof == 27


def test_rosenbrock_from_standard_start():
    res = least_squares_engine(rosenbrock, [-1.2, 1.0])
    assert res.converged
    assert np.max(np.abs(res.values - 1.0)) < 1e-6


def test_accepted_cost_never_increases():
    res = least_squares_engine(rosenbrock, [-1.2, 1.0])
    chi2 = [t["chi2"] for t in res.trace]
    assert np.all(np.diff(chi2) <= 0)
    assert any(not t["accepted"] for t in res.trace)


def test_bounded_solution_flags_active_bound():
    res = least_squares_engine(rosenbrock, [-1.2, 1.0], bounds=([-2, -2], [0.5, 2]))
    ref = least_squares(rosenbrock, [-1.2, 1.0], bounds=([-2, -2], [0.5, 2]))
    assert res.values == pytest.approx(ref.x, abs=1e-6)
    assert res.values == pytest.approx([0.5, 0.25], abs=1e-8)
    assert list(res.at_bound) == [True, False]


def test_singular_problem_raises_with_partial_result():
    with pytest.raises(ConvergenceError, match="singular") as exc:
        least_squares_engine(lambda x: np.array([x[0] - 1, x[0] + 1, 2 * x[0]]), [0.0, 3.0])
    assert exc.value.result is not None


def test_iteration_cap_raises():
    with pytest.raises(ConvergenceError, match="no convergence"):
        least_squares_engine(rosenbrock, [-1.2, 1.0], max_iter=2)


def test_non_finite_start_rejected():
    with pytest.raises(ValueError):
        least_squares_engine(lambda x: np.array([np.nan, x[0]]), [1.0])


def test_relative_covariance_scaled_by_reduced_chi2():
    rng = np.random.default_rng(2)
    x = np.linspace(0, 1, 40)
    y = 2 * x + 1 + rng.normal(0, 0.1, 40)
    f = lambda q: q[0] * x + q[1] - y
    absolute = least_squares_engine(f, [0, 0])
    relative = least_squares_engine(f, [0, 0], absolute_sigma=False)
    assert relative.covariance == pytest.approx(absolute.covariance * absolute.chi2 / 38, rel=1e-10)


def test_numeric_jacobian_matches_analytic():
    x = np.array([0.7, -1.3])
    r0 = rosenbrock(x)
    jac = numeric_jacobian(rosenbrock, x, r0)
    exact = np.array([[-20 * x[0], 10.0], [-1.0, 0.0]])
    assert jac == pytest.approx(exact, rel=1e-4, abs=1e-6)


def test_model_jacobian_matches_central_difference():
    x = np.array([14.12, 3.7])

    def f(q):
        return spectrum_model(JunctionParams(q[0] * 1e-6, q[1] * 1e-12), BAND) / 1e10

    jac = numeric_jacobian(f, x, f(x))
    for k in range(2):
        h = 1e-4 * x[k]
        e = np.zeros(2)
        e[k] = h
        central = (f(x + e) - f(x - e)) / (2 * h)
        assert jac[:, k] == pytest.approx(central, rel=0.01)


# --- junction fits -------------------------------------------------------------

def test_spectrum_fit_recovers_noiseless_data():
    omega = spectrum_model(HIGH, BAND)
    init = HIGH.replace(i0=14.14e-6, c=3.5e-12)
    res = fit_spectrum(BAND, omega / (2 * math.pi), init, sigma_f=np.full(9, 10e6))
    assert res["i0"] == pytest.approx(HIGH.i0, rel=1e-8)
    assert res["c"] == pytest.approx(HIGH.c, rel=1e-8)
    assert res.chi2 < 1e-10


def test_spectrum_reparameterization_agrees_within_errors():
    rng = np.random.default_rng(5)
    f = spectrum_model(HIGH, BAND) / (2 * math.pi) + rng.normal(0, 10e6, 9)
    a = fit_spectrum(BAND, f, HIGH, sigma_f=np.full(9, 10e6))
    b = fit_spectrum(BAND, f, HIGH, sigma_f=np.full(9, 10e6), parameterization="omega_p0")
    assert abs(a["i0"] - b["i0"]) < a.error("i0")
    assert abs(a["c"] - b.extra["c"]) < a.error("c")
    assert b.names == ["i0", "omega_p0"]


def test_spectrum_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_spectrum(BAND[:3], np.ones(3), HIGH)
    with pytest.raises(ValueError):
        fit_spectrum(BAND, np.ones(9), HIGH, free=("t",))
    with pytest.raises(ValueError):
        fit_spectrum(BAND, np.ones(9), HIGH, parameterization="l")


def noiseless_escape_curve(p, env, lo, hi, n=14, width=0.25e-9):
    i = np.linspace(lo, hi, n)
    g = escape_curve_model(p, env, i, width)
    return EscapeRateCurve(i, g, 0.05 * g, axis="i", width=width)


def test_escape_fit_recovers_noiseless_data():
    low = JunctionParams(10.645e-6, 3.7e-12, 0.06)
    env = EnvironmentParams()
    data = noiseless_escape_curve(low, env, 10.50e-6, 10.58e-6)
    res = fit_escape_curve(data, low.replace(i0=10.66e-6, c=3.5e-12, t=0.055), env=env)
    assert res.converged
    assert res["i0"] == pytest.approx(low.i0, rel=1e-8)
    assert res["c"] == pytest.approx(low.c, rel=1e-6)
    assert res["t"] == pytest.approx(low.t, rel=1e-6)
    assert res.chi2 < 1e-8


def test_escape_fit_at_zero_temperature():
    cold = JunctionParams(10.645e-6, 3.7e-12, 0.0)
    env = EnvironmentParams()
    data = noiseless_escape_curve(cold, env, 10.50e-6, 10.58e-6)
    res = fit_escape_curve(data, cold.replace(i0=10.65e-6, c=3.6e-12), free=("i0", "c"), env=env)
    assert res["i0"] == pytest.approx(cold.i0, rel=1e-8)
    assert res.chi2 < 1e-8


def test_escape_fit_requires_two_decades():
    i = np.linspace(10.5e-6, 10.51e-6, 10)
    flat = EscapeRateCurve(i, np.linspace(1e3, 2e3, 10), np.full(10, 10.0), axis="i")
    with pytest.raises(ValueError, match="decades"):
        fit_escape_curve(flat, HIGH)
    with pytest.raises(ValueError, match="current axis"):
        fit_escape_curve(EscapeRateCurve(i, flat.gamma, flat.sigma, axis="t"), HIGH)


def test_linewidth_fit_recovers_noiseless_data():
    comp = linewidth_components(HIGH, BAND)
    res = fit_linewidth(BAND, comp.tau, HIGH.replace(i0=14.13e-6, c=3.9e-12), sigma_tau=0.1 * comp.tau)
    assert res["i0"] == pytest.approx(HIGH.i0, rel=1e-8)
    assert res["c"] == pytest.approx(HIGH.c, rel=1e-6)
    assert res.extra["components"].tau == pytest.approx(comp.tau, rel=1e-6)


def test_noise_free_linewidth_is_escape_limited():
    comp = linewidth_components(HIGH, BAND, sigma_i=0.0)
    assert np.all(comp.noise == 0)
    assert comp.tau == pytest.approx([1 / tunnel_rate(HIGH, i, 1) for i in BAND], rel=1e-12)
    assert comp.crossover() is None


def test_linewidth_crossover_inside_band():
    comp = linewidth_components(HIGH, np.linspace(13.88e-6, 14.00e-6, 13))
    x = comp.crossover()
    assert x is not None and 13.88e-6 < x < 14.00e-6
    below = comp.i < x
    assert np.all(comp.noise[below] > comp.escape[below])
    assert np.all(comp.noise[~below] < comp.escape[~below])
    assert np.all(np.diff(comp.tau) < 0)
