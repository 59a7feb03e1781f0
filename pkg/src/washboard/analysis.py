"""From escape events to escape rates, resonance scans and linewidths.

The escape-rate estimator for bin j of a histogram of width ``t_w`` is

    Gamma_j = ln(S_j / S_{j+1}) / t_w,   S_j = sum_{i >= j} H_i + N_survived

with N_survived the trials still trapped at the end of the ramp (zero in a
run that ends in washout). Conditional on S_j, H_j is binomial with escape
probability p = 1 - exp(-Gamma t_w), so to first order

    sigma_Gamma = sqrt(H_j / (S_j S_{j+1})) / t_w.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from washboard.errors import ConvergenceError
from washboard.fitting import FitResult, least_squares_engine
from washboard.ramp import EscapeEventSet, RampConfig


@dataclass(frozen=True)
class Histogram:
    t_w: float
    counts: np.ndarray
    t0: float = 0.0
    n_survived: int = 0

    def __post_init__(self):
        if not self.t_w > 0:
            raise ValueError("bin width must be positive")
        if np.any(np.asarray(self.counts) < 0):
            raise ValueError("counts must be non-negative")

    @property
    def edges(self) -> np.ndarray:
        return self.t0 + self.t_w * np.arange(len(self.counts) + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.t0 + self.t_w * (np.arange(len(self.counts)) + 0.5)


@dataclass(frozen=True)
class EscapeRateCurve:
    """Escape rate per bin; ``x`` is time (s) or current (A) depending on ``axis``."""

    x: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    axis: str = "t"
    counts: Optional[np.ndarray] = None
    at_risk: Optional[np.ndarray] = None
    #: bin width in units of ``x``; each rate is the bin-averaged hazard
    width: Optional[float] = None

    def __len__(self):
        return len(self.x)

    def select(self, mask) -> "EscapeRateCurve":
        mask = np.asarray(mask)
        pick = lambda a: None if a is None else np.asarray(a)[mask]
        return EscapeRateCurve(self.x[mask], self.gamma[mask], self.sigma[mask], self.axis,
                               pick(self.counts), pick(self.at_risk), self.width)


@dataclass(frozen=True)
class CurrentCalibration:
    """Affine time-to-current map ``I = i_at_t0 + di_dt (t - t0)``."""

    i_at_t0: float
    di_dt: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.di_dt > 0:
            raise ValueError("calibration slope must be positive")

    @classmethod
    def from_ramp(cls, ramp: RampConfig) -> "CurrentCalibration":
        return cls(i_at_t0=ramp.i_start, di_dt=ramp.di_dt, t0=0.0)

    def current(self, t):
        return self.i_at_t0 + self.di_dt * (np.asarray(t, dtype=float) - self.t0)

    def time(self, i):
        return self.t0 + (np.asarray(i, dtype=float) - self.i_at_t0) / self.di_dt


@dataclass(frozen=True)
class ResonanceScan:
    frequency: float  # Hz
    i: np.ndarray
    enhancement: np.ndarray
    sigma: np.ndarray


@dataclass
class LorentzianFit:
    """Sum of Lorentzians plus a constant, fitted to a resonance scan.

    ``centers`` and ``fwhm`` are in amperes.
    """

    centers: np.ndarray
    fwhm: np.ndarray
    amplitudes: np.ndarray
    offset: float
    covariance: np.ndarray
    center_errors: np.ndarray
    fwhm_errors: np.ndarray
    converged: bool
    overlapping: bool
    result: FitResult = field(repr=False)

    def model(self, i):
        return lorentzian_sum(i, self.centers, self.fwhm, self.amplitudes, self.offset)


def build_histogram(events: EscapeEventSet, t_w: float, t0: float = 0.0) -> Histogram:
    """Bin escape times into ``[t0 + k t_w, t0 + (k+1) t_w)``; survivors are tallied, not binned."""
    if not t_w > 0:
        raise ValueError("bin width must be positive")
    t = np.asarray(events.timestamps)[np.asarray(events.escaped, dtype=bool)]
    n_survived = events.n_trials - len(t)
    if len(t) == 0:
        raise ValueError("no escape events to bin")
    if np.any(t < t0):
        raise ValueError("escape times before the histogram origin")
    k = np.floor((t - t0) / t_w).astype(np.int64)
    counts = np.bincount(k, minlength=int(k.max()) + 1)
    return Histogram(t_w=t_w, counts=counts, t0=t0, n_survived=n_survived)


def histogram_from_counts(t_s: Sequence[float], counts: Sequence[int], n_survived: int = 0) -> Histogram:
    """Histogram from pre-binned ``(bin start, count)`` rows with uniform spacing."""
    t_s = np.asarray(t_s, dtype=float)
    counts = np.asarray(counts, dtype=np.int64)
    if len(t_s) < 2:
        raise ValueError("need at least two bins")
    widths = np.diff(t_s)
    if not np.allclose(widths, widths[0], rtol=1e-6, atol=0):
        raise ValueError("bins must be uniformly spaced")
    return Histogram(t_w=float(widths[0]), counts=counts, t0=float(t_s[0]), n_survived=n_survived)


def tail_sums(h: Histogram) -> np.ndarray:
    """S_j for j = 0 .. n (the last entry is the survivor count), exact integers."""
    c = np.asarray(h.counts, dtype=np.int64)
    s = np.empty(len(c) + 1, dtype=np.int64)
    s[-1] = h.n_survived
    s[:-1] = np.cumsum(c[::-1])[::-1] + h.n_survived
    return s


def escape_rate_estimate(h: Histogram, keep_empty: bool = False) -> EscapeRateCurve:
    """Escape rate per bin, placed at bin centers on the time axis.

    Bins whose following tail is empty are undefined and skipped. Bins with
    no counts give a zero rate; they are dropped unless ``keep_empty``.
    """
    s = tail_sums(h)
    c = np.asarray(h.counts, dtype=np.int64)
    ok = s[1:] > 0
    if not keep_empty:
        ok &= c > 0
    sj, sj1, hj = s[:-1][ok].astype(float), s[1:][ok].astype(float), c[ok].astype(float)
    gamma = np.log(sj / sj1) / h.t_w
    sigma = np.sqrt(hj / (sj * sj1)) / h.t_w
    return EscapeRateCurve(x=h.centers[ok], gamma=gamma, sigma=sigma, axis="t",
                           counts=c[ok], at_risk=s[:-1][ok], width=h.t_w)


def to_current_axis(curve: EscapeRateCurve, cal: CurrentCalibration) -> EscapeRateCurve:
    if curve.axis != "t":
        raise ValueError("curve is already on the current axis")
    width = None if curve.width is None else curve.width * cal.di_dt
    return replace(curve, x=cal.current(curve.x), axis="i", width=width)


def enhancement_scan(with_mw: EscapeRateCurve, without_mw: EscapeRateCurve, frequency: float) -> ResonanceScan:
    """Pointwise (Gamma_m - Gamma_0) / Gamma_0 on the undriven curve's grid.

    Each undriven point is paired with the nearest driven point; pairs further
    apart than half the undriven spacing, and points with Gamma_0 = 0, are dropped.
    """
    if not frequency > 0:
        raise ValueError("drive frequency must be positive")
    x0, xm = np.asarray(without_mw.x), np.asarray(with_mw.x)
    if len(x0) == 0 or len(xm) == 0:
        raise ValueError("empty rate curve")
    spacing = np.median(np.diff(x0)) if len(x0) > 1 else np.inf
    k = np.clip(np.searchsorted(xm, x0), 1, max(len(xm) - 1, 1))
    k = np.where((k > 0) & (np.abs(xm[k - 1] - x0) <= np.abs(xm[np.minimum(k, len(xm) - 1)] - x0)), k - 1, k)
    k = np.minimum(k, len(xm) - 1)
    ok = (np.abs(xm[k] - x0) <= 0.5 * spacing + 1e-15 * np.abs(x0)) & (without_mw.gamma > 0)
    g0, s0 = without_mw.gamma[ok], without_mw.sigma[ok]
    gm, sm = with_mw.gamma[k[ok]], with_mw.sigma[k[ok]]
    ratio = gm / g0
    sigma = np.sqrt((sm / g0) ** 2 + (ratio * s0 / g0) ** 2)
    return ResonanceScan(frequency=frequency, i=x0[ok], enhancement=ratio - 1.0, sigma=sigma)


def lorentzian_sum(i, centers, fwhm, amplitudes, offset=0.0):
    i = np.asarray(i, dtype=float)[..., None]
    half = 0.5 * np.asarray(fwhm)
    return offset + np.sum(np.asarray(amplitudes) * half**2 / ((i - np.asarray(centers)) ** 2 + half**2), axis=-1)


def _peak_guesses(i, y, n_peaks):
    smooth = np.convolve(y, np.ones(5) / 5.0, mode="same") if len(y) >= 5 else y
    interior = np.flatnonzero((smooth[1:-1] >= smooth[:-2]) & (smooth[1:-1] >= smooth[2:])) + 1
    interior = interior[np.argsort(smooth[interior])[::-1]]
    picks = list(interior[:n_peaks])
    # fall back to the global ordering if there are too few local maxima
    for k in np.argsort(smooth)[::-1]:
        if len(picks) >= n_peaks:
            break
        if all(abs(k - q) > 2 for q in picks):
            picks.append(k)
    return sorted(picks)


def fit_lorentzians(
    scan: ResonanceScan,
    n_peaks: int = 2,
    init: Optional[dict] = None,
    max_iter: int = 200,
) -> LorentzianFit:
    """Inverse-variance weighted fit of ``n_peaks`` Lorentzians plus a constant.

    ``init`` may give ``centers``, ``fwhm`` (A) and ``amplitudes``; missing
    guesses come from the largest local maxima of a 5-point moving average.
    Currents are internally shifted and scaled to nA.
    """
    if n_peaks < 1:
        raise ValueError("need at least one peak")
    n_par = 3 * n_peaks + 1
    i = np.asarray(scan.i, dtype=float)
    y = np.asarray(scan.enhancement, dtype=float)
    sig = np.asarray(scan.sigma, dtype=float)
    if len(i) < 4 * n_par:
        raise ValueError(f"need at least {4 * n_par} points for {n_peaks} peaks, got {len(i)}")
    if np.any(sig <= 0):
        raise ValueError("uncertainties must be positive")
    origin = float(np.mean(i))
    x = (i - origin) * 1e9
    init = dict(init or {})
    picks = _peak_guesses(x, y, n_peaks)
    span = float(x.max() - x.min())
    centers = np.asarray(init.get("centers", [i[k] for k in picks]), dtype=float)
    centers = (centers - origin) * 1e9
    fwhm = np.asarray(init.get("fwhm", [span / (4.0 * n_peaks)] * n_peaks), dtype=float)
    if "fwhm" in init:
        fwhm = fwhm * 1e9
    offset0 = float(np.median(y))
    floor = 0.05 * max(float(np.ptp(y)), 1e-12)
    amps = np.asarray(init.get("amplitudes", [max(y[k] - offset0, floor) for k in picks]), dtype=float)

    x0 = np.concatenate([np.ravel(np.column_stack([centers, fwhm, amps])), [offset0]])
    lo = np.concatenate([np.tile([x.min() - span, 1e-6 * span, 0.0], n_peaks), [-np.inf]])
    hi = np.concatenate([np.tile([x.max() + span, 10 * span, np.inf], n_peaks), [np.inf]])

    def residuals(q):
        c, w, a = q[0:-1:3], q[1:-1:3], q[2:-1:3]
        return (lorentzian_sum(x, c, w, a, q[-1]) - y) / sig

    names = [f"{n}{k}" for k in range(n_peaks) for n in ("center", "fwhm", "amp")] + ["offset"]
    try:
        res = least_squares_engine(residuals, x0, bounds=(lo, hi), max_iter=max_iter, names=names)
    except ConvergenceError as exc:
        part = exc.result
        if part is not None and np.any(part.values[2:-1:3] <= 0):
            raise ConvergenceError(
                f"a peak amplitude fell to zero: the scan supports fewer than {n_peaks} peaks", part
            ) from None
        raise
    q, cov = res.values, res.covariance
    order = np.argsort(q[0:-1:3])
    c, w, a = q[0:-1:3][order], q[1:-1:3][order], q[2:-1:3][order]
    idx = np.array([[3 * k, 3 * k + 1, 3 * k + 2] for k in order]).ravel()
    perm = np.concatenate([idx, [n_par - 1]])
    cov = cov[np.ix_(perm, perm)]
    scale = np.ones(n_par)
    scale[0:-1:3] = 1e-9
    scale[1:-1:3] = 1e-9
    cov = cov * np.outer(scale, scale)
    errs = np.sqrt(np.clip(np.diag(cov), 0, None))
    overlapping = bool(n_peaks > 1 and np.any(np.diff(c) < 0.5 * (w[1:] + w[:-1]) / 2))
    return LorentzianFit(
        centers=c * 1e-9 + origin,
        fwhm=w * 1e-9,
        amplitudes=a,
        offset=float(q[-1]),
        covariance=cov,
        center_errors=errs[0:-1:3],
        fwhm_errors=errs[1:-1:3],
        converged=res.converged,
        overlapping=overlapping,
        result=res,
    )


def widths_to_linewidth(fit: LorentzianFit, slope, peak: int = 0) -> tuple[float, float]:
    """Convert the current FWHM of ``peak`` to (Delta omega in rad/s, tau in s)."""
    slope = float(slope)
    if slope == 0:
        raise ValueError("zero d omega/dI: width cannot be converted")
    width = abs(slope) * float(fit.fwhm[peak])
    return width, 1.0 / width


def current_width_to_linewidth(delta_i, slope) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`widths_to_linewidth` for raw (Delta I, slope) pairs."""
    slope = np.asarray(slope, dtype=float)
    if np.any(slope == 0):
        raise ValueError("zero d omega/dI: width cannot be converted")
    width = np.abs(slope) * np.asarray(delta_i, dtype=float)
    return width, 1.0 / width


@dataclass(frozen=True)
class SlopeFit:
    slopes: np.ndarray  # d omega / dI at each input current, rad/s per A
    residuals: np.ndarray  # omega residuals, rad/s
    rms: float
    coefficients: np.ndarray
    order: int


def local_slope(f_hz, i, order: int = 3) -> SlopeFit:
    """Smooth polynomial fit of omega = 2 pi f against bias; returns its derivative at each point."""
    f_hz = np.asarray(f_hz, dtype=float)
    i = np.asarray(i, dtype=float)
    if not 2 <= order <= 5:
        raise ValueError("polynomial order must be between 2 and 5")
    if len(i) < max(4, order + 1):
        raise ValueError(f"need at least {max(4, order + 1)} points")
    if np.ptp(i) == 0:
        raise ConvergenceError("all currents identical: slope is ill-conditioned")
    omega = 2.0 * np.pi * f_hz
    poly, (resid, rank, _, _) = np.polynomial.Polynomial.fit(i, omega, order, full=True)
    if rank < order + 1:
        raise ConvergenceError("polynomial fit is rank deficient")
    r = omega - poly(i)
    return SlopeFit(
        slopes=poly.deriv()(i),
        residuals=r,
        rms=float(np.sqrt(np.mean(r**2))),
        coefficients=poly.convert().coef,
        order=order,
    )
