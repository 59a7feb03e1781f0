import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from washboard import JunctionParams, solve_levels
from washboard.analysis import (
    CurrentCalibration,
    EscapeRateCurve,
    Histogram,
    ResonanceScan,
    build_histogram,
    current_width_to_linewidth,
    enhancement_scan,
    escape_rate_estimate,
    fit_lorentzians,
    histogram_from_counts,
    local_slope,
    lorentzian_sum,
    tail_sums,
    to_current_axis,
    widths_to_linewidth,
)
from washboard.eigensolver import domega_di
from washboard.errors import ConvergenceError
from washboard.ramp import EscapeEventSet, RampConfig


def test_two_bin_worked_value():
    h = Histogram(t_w=50e-9, counts=np.array([100, 50]))
    curve = escape_rate_estimate(h)
    assert curve.gamma[0] == pytest.approx(math.log(3) / 50e-9, rel=1e-12)
    assert curve.gamma[0] == pytest.approx(2.197e7, rel=1e-3)
    # the last bin has an empty tail after it and is undefined
    assert len(curve) == 1
    assert curve.sigma[0] == pytest.approx(math.sqrt(100 / (150 * 50)) / 50e-9, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=2, max_size=40), st.integers(0, 500))
def test_estimator_telescopes_exactly(counts, survivors):
    h = Histogram(t_w=1e-6, counts=np.array(counts), n_survived=survivors)
    s = tail_sums(h)
    assert s[0] == sum(counts) + survivors
    assert np.array_equal(s[:-1] - s[1:], counts)
    # tails never grow, so the defined bins are a prefix and their rates telescope
    curve = escape_rate_estimate(h, keep_empty=True)
    n = len(curve)
    assert n == np.count_nonzero(s[1:] > 0)
    if n:
        assert curve.gamma.sum() * h.t_w == pytest.approx(math.log(s[0] / s[n]), rel=1e-12, abs=1e-12)


def test_survivors_enter_the_tail_sums():
    h = Histogram(t_w=1.0, counts=np.array([10, 10]), n_survived=80)
    curve = escape_rate_estimate(h)
    assert curve.gamma == pytest.approx([math.log(100 / 90), math.log(90 / 80)], rel=1e-14)


def test_build_histogram_bins_and_tallies():
    ramp = RampConfig(0.0, 1.0, di_dt=1.0, n_trials=5)
    ev = EscapeEventSet(np.array([0.1, 0.15, 0.35, 0.95, 1.0]), np.array([1, 1, 1, 1, 0], bool), ramp)
    h = build_histogram(ev, 0.1)
    assert list(h.counts) == [0, 2, 0, 1, 0, 0, 0, 0, 0, 1]
    assert h.n_survived == 1
    with pytest.raises(ValueError):
        build_histogram(ev, 0.0)


def test_histogram_from_counts_requires_uniform_bins():
    h = histogram_from_counts([0.0, 1e-6, 2e-6], [5, 3, 1])
    assert h.t_w == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        histogram_from_counts([0.0, 1e-6, 3e-6], [5, 3, 1])


def test_current_axis_bin_width():
    cal = CurrentCalibration(i_at_t0=13.9e-6, di_dt=5e-3)
    curve = escape_rate_estimate(Histogram(t_w=50e-9, counts=np.array([5, 4, 3, 2])))
    ci = to_current_axis(curve, cal)
    assert ci.width == pytest.approx(0.25e-9, rel=1e-12)
    assert np.diff(ci.x) == pytest.approx(0.25e-9, rel=1e-9)
    assert ci.x[0] == pytest.approx(13.9e-6 + 5e-3 * 25e-9)
    assert cal.time(cal.current(1.234e-3)) == pytest.approx(1.234e-3)
    with pytest.raises(ValueError):
        to_current_axis(ci, cal)


def test_enhancement_scan_pairs_nearest_points():
    x = np.linspace(0, 1, 11)
    g0 = EscapeRateCurve(x, np.full(11, 100.0), np.full(11, 10.0), axis="i")
    gm = EscapeRateCurve(x + 0.01, np.full(11, 150.0), np.full(11, 10.0), axis="i")
    scan = enhancement_scan(gm, g0, 6e9)
    assert scan.enhancement == pytest.approx(np.full(11, 0.5))
    assert scan.sigma == pytest.approx(np.full(11, math.hypot(0.1, 1.5 * 0.1)))
    far = EscapeRateCurve(x + 0.3, gm.gamma, gm.sigma, axis="i")
    assert len(enhancement_scan(far, g0, 6e9).i) < 11


def synthetic_scan(centers, fwhm, amps, offset=0.02, sigma=0.01, n=121, shift=0.0):
    i = np.linspace(13.85e-6, 14.05e-6, n) + shift
    y = lorentzian_sum(i, np.asarray(centers) + shift, fwhm, amps, offset)
    return ResonanceScan(6e9, i, y, np.full(n, sigma))


def test_lorentzian_fit_recovers_noiseless_parameters():
    truth = dict(centers=[13.92e-6, 13.99e-6], fwhm=[12e-9, 8e-9], amps=[0.4, 1.2])
    fit = fit_lorentzians(synthetic_scan(**truth), n_peaks=2)
    assert fit.converged
    assert fit.centers == pytest.approx(truth["centers"], rel=1e-6)
    assert fit.fwhm == pytest.approx(truth["fwhm"], rel=1e-6)
    assert fit.amplitudes == pytest.approx(truth["amps"], rel=1e-6)
    assert fit.offset == pytest.approx(0.02, rel=1e-6)
    assert not fit.overlapping
    assert fit.result.chi2 < 1e-12


def test_lorentzian_fit_is_shift_covariant():
    truth = dict(centers=[13.92e-6, 13.99e-6], fwhm=[12e-9, 8e-9], amps=[0.4, 1.2])
    rng = np.random.default_rng(4)
    a = synthetic_scan(**truth)
    noise = rng.normal(0, 0.01, len(a.i))
    a = ResonanceScan(a.frequency, a.i, a.enhancement + noise, a.sigma)
    d = 0.3e-6
    b = ResonanceScan(a.frequency, a.i + d, a.enhancement, a.sigma)
    fa, fb = fit_lorentzians(a), fit_lorentzians(b)
    assert fb.centers - d == pytest.approx(fa.centers, rel=1e-10)
    assert fb.covariance == pytest.approx(fa.covariance, rel=1e-6, abs=1e-10 * np.max(np.abs(fa.covariance)))
    assert fb.center_errors == pytest.approx(fa.center_errors, rel=1e-6)


def test_one_peak_scan_cannot_support_two():
    scan = synthetic_scan([13.95e-6], [10e-9], [1.0])
    rng = np.random.default_rng(0)
    scan = ResonanceScan(scan.frequency, scan.i, scan.enhancement + rng.normal(0, 0.01, len(scan.i)), scan.sigma)
    single = fit_lorentzians(scan, n_peaks=1)
    assert single.centers[0] == pytest.approx(13.95e-6, abs=0.5e-9)
    try:
        fit_lorentzians(scan, n_peaks=2)
    except ConvergenceError as exc:
        assert "fewer than 2 peaks" in str(exc)


def test_lorentzian_fit_needs_enough_points():
    scan = synthetic_scan([13.95e-6], [10e-9], [1.0], n=20)
    with pytest.raises(ValueError):
        fit_lorentzians(scan, n_peaks=2)


def test_width_to_coherence_time():
    slope = 2 * math.pi * 1e9 / 1e-6  # 1 GHz per uA
    width, tau = current_width_to_linewidth(10e-9, slope)
    assert tau == pytest.approx(15.9e-9, rel=1e-3)
    fit = fit_lorentzians(synthetic_scan([13.95e-6], [10e-9], [1.0]), n_peaks=1)
    w, t = widths_to_linewidth(fit, -slope)
    assert t == pytest.approx(tau, rel=1e-6)
    with pytest.raises(ValueError):
        current_width_to_linewidth(10e-9, 0.0)


def test_cubic_slope_is_exact():
    i = np.linspace(13.9e-6, 14.0e-6, 7)
    u = (i - 13.95e-6) * 1e6
    f = 6e9 - 4e9 * u + 3e8 * u**2 - 2e9 * u**3
    fit = local_slope(f, i, order=3)
    exact = 2 * math.pi * (-4e9 + 6e8 * u - 6e9 * u**2) * 1e6
    assert fit.slopes == pytest.approx(exact, rel=1e-8)
    assert fit.rms < 1e-3


def test_slope_of_model_frequencies_matches_eigensolver():
    p = JunctionParams(14.12e-6, 3.7e-12)
    i = np.linspace(13.88e-6, 14.00e-6, 9)
    f = np.array([solve_levels(p, x).frequency(0, 1) / (2 * math.pi) for x in i])
    fit = local_slope(f, i, order=3)
    direct = np.array([domega_di(p, x) for x in i])
    assert np.all(np.abs(fit.slopes / direct - 1) < 0.1)


def test_slope_validation():
    with pytest.raises(ValueError):
        local_slope([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        local_slope(np.ones(6), np.arange(6.0), order=6)
    with pytest.raises(ConvergenceError):
        local_slope(np.arange(6.0), np.ones(6))
