"""Parameter estimation: a shared damped Gauss-Newton engine and three junction fits.

Fit parameters are handled in scaled units (I0 in uA, C in pF, T in mK,
plasma frequency in GHz) so the normal equations stay well conditioned.
Reported values and uncertainties are converted back to SI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from washboard.constants import CONSTANTS
from washboard.eigensolver import GridConfig, LevelSolution, solve_levels, transition_frequency, transition_slopes
from washboard.errors import BiasAboveCritical, ConvergenceError, NoBoundLevel
from washboard.junction import JunctionParams
from washboard.rates import EnvironmentParams, rate_set, tunnel_rate

MAX_ITER = 200
REL_STEP = 1e-6
XTOL = 1e-8
#: normal matrices with a column-scaled condition number above this are singular
SINGULAR_COND = 1e14


@dataclass
class FitResult:
    """Outcome of a least-squares fit.

    ``errors`` are 1 sigma from the inverse Gauss-Newton Hessian, rescaled by
    the reduced chi-square when the residuals carry no absolute weights.
    """

    names: list[str]
    values: np.ndarray
    errors: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    iterations: int
    at_bound: np.ndarray
    trace: list[dict] = field(default_factory=list, repr=False)
    message: str = ""
    extra: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "parameters": {
                n: {"value": float(v), "sigma": float(e), "at_bound": bool(b)}
                for n, v, e, b in zip(self.names, self.values, self.errors, self.at_bound)
            },
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "covariance": np.asarray(self.covariance).tolist(),
            "message": self.message,
        }


def numeric_jacobian(f: Callable, x: np.ndarray, r0: np.ndarray, rel_step: float = REL_STEP,
                     lo=None, hi=None) -> np.ndarray:
    """Forward-difference Jacobian with step ``rel_step * max(|x_k|, 1)`` per parameter.

    The step flips sign when a forward step would leave the box.
    """
    jac = np.empty((len(r0), len(x)))
    for k in range(len(x)):
        h = rel_step * max(abs(x[k]), 1.0)
        if hi is not None and x[k] + h > hi[k]:
            h = -h
        xk = x.copy()
        xk[k] += h
        jac[:, k] = (f(xk) - r0) / h
    return jac


def least_squares_engine(
    residuals: Callable[[np.ndarray], np.ndarray],
    x0,
    bounds=None,
    max_iter: int = MAX_ITER,
    rel_step: float = REL_STEP,
    xtol: float = XTOL,
    names: Optional[Sequence[str]] = None,
    absolute_sigma: bool = True,
) -> FitResult:
    """Minimize ``sum(residuals(x)**2)`` by Levenberg-Marquardt.

    Damping starts at zero (a pure Gauss-Newton step) and is raised tenfold on
    every rejected step and lowered tenfold on every accepted one. The
    damping term is ``lam * diag(J^T J)``. Steps are projected onto the box
    ``bounds = (lo, hi)``; a parameter sitting on a bound with the gradient
    pushing outward is held fixed for that step. Iteration stops once the
    relative parameter change drops below ``xtol``.

    Raises
    ------
    ValueError
        If the residuals are not finite at ``x0``.
    ConvergenceError
        On singular normal equations or after ``max_iter`` iterations; the
        partial :class:`FitResult` is attached.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = len(x)
    names = list(names) if names is not None else [f"p{k}" for k in range(n)]
    lo = np.full(n, -np.inf) if bounds is None else np.broadcast_to(np.asarray(bounds[0], float), (n,)).copy()
    hi = np.full(n, np.inf) if bounds is None else np.broadcast_to(np.asarray(bounds[1], float), (n,)).copy()
    if np.any(lo > hi):
        raise ValueError("lower bounds exceed upper bounds")
    x = np.clip(x, lo, hi)
    r = np.asarray(residuals(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals are not finite at the initial point")
    if len(r) < n:
        raise ValueError(f"{len(r)} residuals for {n} parameters")
    cost = float(r @ r)
    lam = 0.0
    trace = [{"iteration": 0, "chi2": cost, "lambda": lam, "accepted": True}]
    converged = False
    it = 0
    jac = numeric_jacobian(residuals, x, r, rel_step, lo, hi)

    def partial(message):
        return _result(names, x, jac, cost, len(r), False, it, lo, hi, trace, message, absolute_sigma)

    while it < max_iter:
        it += 1
        a = jac.T @ jac
        g = jac.T @ r
        d = np.diag(a).copy()
        if np.any(d == 0) or _scaled_cond(a) > SINGULAR_COND:
            raise ConvergenceError("singular normal equations", partial("singular normal equations"))
        # parameters on a bound whose descent direction points outward stay put
        pinned = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        step = np.zeros(n)
        f = ~pinned
        if f.any():
            af = a[np.ix_(f, f)]
            step[f] = np.linalg.solve(af + lam * np.diag(d[f]), -g[f])
        x_new = np.clip(x + step, lo, hi)
        dx = x_new - x
        small = np.max(np.abs(dx) / np.maximum(np.abs(x), 1e-12)) < xtol
        r_new = np.asarray(residuals(x_new), dtype=float)
        cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
        accepted = cost_new <= cost
        trace.append({"iteration": it, "chi2": min(cost_new, cost) if accepted else cost,
                      "trial_chi2": cost_new, "lambda": lam, "accepted": accepted})
        if accepted:
            x, r, cost = x_new, r_new, cost_new
            lam = lam / 10.0
            if lam < 1e-12:
                lam = 0.0
            if not small:
                jac = numeric_jacobian(residuals, x, r, rel_step, lo, hi)
        else:
            lam = max(10.0 * lam, 1e-3)
        if small or cost == 0.0:
            converged = True
            break
        if lam > 1e16:
            # no descent direction left at machine precision
            converged = True
            break
    if not converged:
        res = partial(f"no convergence in {max_iter} iterations")
        raise ConvergenceError(res.message, res)
    jac = numeric_jacobian(residuals, x, r, rel_step, lo, hi)
    return _result(names, x, jac, cost, len(r), True, it, lo, hi, trace, "converged", absolute_sigma)


def _scaled_cond(a: np.ndarray) -> float:
    s = np.sqrt(np.abs(np.diag(a)))
    if np.any(s == 0):
        return math.inf
    return float(np.linalg.cond(a / np.outer(s, s)))


def _result(names, x, jac, cost, m, converged, it, lo, hi, trace, message, absolute_sigma):
    n = len(x)
    dof = max(m - n, 0)
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.full((n, n), np.nan)
    if not absolute_sigma and dof > 0:
        cov = cov * (cost / dof)
    errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    tol = 1e-12 * np.maximum(np.abs(x), 1.0)
    at_bound = (np.abs(x - lo) <= tol) | (np.abs(hi - x) <= tol)
    return FitResult(list(names), x.copy(), errors, cov, cost, dof, converged, it,
                     at_bound, trace, message)


# --- junction fits ---------------------------------------------------------

#: name -> (SI per fit unit, JunctionParams field)
_JUNCTION_UNITS = {"i0": 1e-6, "c": 1e-12, "t": 1e-3}


class _LevelCache:
    """Per-fit cache of level solutions keyed by the exact (I0, C, bias) values.

    Keys are not rounded: finite-difference Jacobians move parameters by one
    part in 1e6, and rounding would map those probes onto the base point.
    """

    def __init__(self, grid: Optional[GridConfig]):
        self.grid = grid
        self.store: dict = {}

    def __call__(self, p: JunctionParams, i: float) -> LevelSolution:
        key = (p.i0, p.c, i)
        sol = self.store.get(key)
        if sol is None:
            sol = solve_levels(p, i, self.grid)
            self.store[key] = sol
        return sol


def _free_setup(init: JunctionParams, free: Sequence[str], allowed: Sequence[str]):
    free = list(free)
    if not free:
        raise ValueError("nothing to fit: every parameter is frozen")
    for name in free:
        if name not in allowed:
            raise ValueError(f"cannot fit {name!r}; choose from {list(allowed)}")
    x0 = np.array([getattr(init, n) / _JUNCTION_UNITS[n] for n in free])
    return free, x0


def _params(init: JunctionParams, free, x) -> JunctionParams:
    return init.replace(**{n: float(v) * _JUNCTION_UNITS[n] for n, v in zip(free, x)})


def _finish(res: FitResult, free, scale: dict) -> FitResult:
    """Convert a fit result from scaled units back to SI."""
    s = np.array([scale[n] for n in free])
    res.values = res.values * s
    res.errors = res.errors * s
    res.covariance = res.covariance * np.outer(s, s)
    res.names = list(free)
    return res


_MODEL_FAILURES = (NoBoundLevel, BiasAboveCritical, ConvergenceError)
#: residual given to data points at which a trial parameter set has no model value
PENALTY = 1e3


def _per_point(fn, biases, strict: bool) -> np.ndarray:
    """Evaluate ``fn`` at each bias; with ``strict=False`` failures become nan."""
    out = []
    for bias in np.atleast_1d(np.asarray(biases, dtype=float)):
        try:
            out.append(fn(bias))
        except _MODEL_FAILURES:
            if strict:
                raise
            out.append(math.nan)
    return np.array(out, dtype=float)


def _penalized(r: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(r), r, PENALTY)


def _bin_average(g_lo: float, g_hi: float) -> float:
    """Average of a log-linear hazard over a bin from its edge values."""
    if g_lo <= 0 or g_hi <= 0:
        return 0.5 * (g_lo + g_hi)
    b = math.log(g_hi / g_lo)
    return 0.5 * (g_lo + g_hi) if abs(b) < 1e-8 else (g_hi - g_lo) / b


def escape_curve_model(
    p: JunctionParams,
    env: EnvironmentParams,
    i,
    width: Optional[float] = None,
    grid: Optional[GridConfig] = None,
    closure: str = "balance",
    cache: Optional[_LevelCache] = None,
    strict: bool = True,
) -> np.ndarray:
    """Forward model for a measured escape-rate curve (1/s).

    With ``width`` (A) each point is the average hazard over its bin, which is
    what the histogram estimator measures. With ``strict=False`` biases
    without a bound level give nan instead of raising.
    """
    cache = cache or _LevelCache(grid)

    def gamma(bias):
        return rate_set(p, env, bias, sol=cache(p, bias), closure=closure).total

    def point(bias):
        if width:
            return _bin_average(gamma(bias - 0.5 * width), gamma(bias + 0.5 * width))
        return gamma(bias)

    return _per_point(point, i, strict)


def fit_escape_curve(
    data,
    init: JunctionParams,
    free: Sequence[str] = ("i0", "c", "t"),
    env: EnvironmentParams = EnvironmentParams(),
    grid: Optional[GridConfig] = None,
    closure: str = "balance",
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Fit (I0, C, T) to an escape-rate curve on the current axis.

    Residuals are ``(ln Gamma_model - ln Gamma_data) / (sigma / Gamma_data)``.
    The forward model uses the same population closure as the simulator.
    Points where trial parameters leave no bound level get a fixed large
    residual, so such steps are rejected while the other points still steer.
    """
    if getattr(data, "axis", "i") != "i":
        raise ValueError("escape curve must be on the current axis")
    i = np.asarray(data.x, dtype=float)
    gd = np.asarray(data.gamma, dtype=float)
    sd = np.asarray(data.sigma, dtype=float)
    ok = (gd > 0) & (sd > 0)
    i, gd, sd = i[ok], gd[ok], sd[ok]
    if len(i) < 8:
        raise ValueError(f"need at least 8 points with positive rates, got {len(i)}")
    if gd.max() / gd.min() < 100.0:
        raise ValueError("escape curve must span at least two decades")
    free, x0 = _free_setup(init, free, ("i0", "c", "t"))
    cache = _LevelCache(grid)
    log_data = np.log(gd)
    rel = sd / gd
    width = getattr(data, "width", None)

    def residuals(x):
        p = _params(init, free, x)
        model = escape_curve_model(p, env, i, width, grid, closure, cache, strict=False)
        return _penalized((np.log(np.maximum(model, 1e-300)) - log_data) / rel)

    lo = np.array([1e-6 if n != "t" else 0.0 for n in free])
    res = least_squares_engine(residuals, x0, bounds=(lo, np.inf), max_iter=max_iter, names=free)
    res.extra["n_solves"] = len(cache.store)
    return _finish(res, free, _JUNCTION_UNITS)


def _omega_p0(i0: float, c: float) -> float:
    return math.sqrt(2.0 * math.pi * i0 / (CONSTANTS.flux_quantum * c))


def _c_from_omega_p0(i0: float, omega_p0: float) -> float:
    return 2.0 * math.pi * i0 / (CONSTANTS.flux_quantum * omega_p0**2)


def spectrum_model(p: JunctionParams, i, grid: Optional[GridConfig] = None,
                   cache: Optional[_LevelCache] = None, strict: bool = True) -> np.ndarray:
    """omega_01 (rad/s) at each bias."""
    cache = cache or _LevelCache(grid)

    def point(bias):
        sol = cache(p, bias)
        if sol.n_levels < 2:
            raise NoBoundLevel(f"need two levels at I = {bias:.6g} A")
        return transition_frequency(sol, 0, 1)

    return _per_point(point, i, strict)


def fit_spectrum(
    i_center,
    f_hz,
    init: JunctionParams,
    sigma_f: Optional[Sequence[float]] = None,
    free: Sequence[str] = ("i0", "c"),
    parameterization: str = "c",
    grid: Optional[GridConfig] = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Fit omega_01(I; I0, C) from the eigensolver to measured resonance positions.

    ``parameterization="omega_p0"`` fits the zero-bias plasma frequency in
    place of C; the result then reports ``omega_p0`` (rad/s) and also carries
    the implied C in ``extra``. Without ``sigma_f`` the residuals are
    unweighted and uncertainties are scaled by the reduced chi-square.
    """
    i_center = np.asarray(i_center, dtype=float)
    omega = 2.0 * np.pi * np.asarray(f_hz, dtype=float)
    if len(i_center) < 4 or len(i_center) != len(omega):
        raise ValueError("need at least 4 (current, frequency) points of equal length")
    if parameterization not in ("c", "omega_p0"):
        raise ValueError(f"unknown parameterization {parameterization!r}")
    sigma = None if sigma_f is None else 2.0 * np.pi * np.asarray(sigma_f, dtype=float)
    weight = 2.0 * np.pi * 1e9 if sigma is None else sigma  # residuals in GHz when unweighted
    cache = _LevelCache(grid)
    free = list(free)
    for n in free:
        if n not in ("i0", "c"):
            raise ValueError(f"cannot fit {n!r} from a spectrum")
    if not free:
        raise ValueError("nothing to fit: every parameter is frozen")

    if parameterization == "c":
        names = free
        x0 = np.array([getattr(init, n) / _JUNCTION_UNITS[n] for n in free])
        scale = dict(_JUNCTION_UNITS)

        def build(x):
            return _params(init, free, x)
    else:
        names = ["i0" if n == "i0" else "omega_p0" for n in free]
        wp_unit = 2.0 * np.pi * 1e9
        x0 = np.array([init.i0 * 1e6 if n == "i0" else _omega_p0(init.i0, init.c) / wp_unit for n in names])
        scale = {"i0": 1e-6, "omega_p0": wp_unit}
        wp_fixed = _omega_p0(init.i0, init.c)

        def build(x):
            vals = dict(zip(names, x))
            i0 = vals.get("i0", init.i0 * 1e6) * 1e-6
            wp = vals["omega_p0"] * wp_unit if "omega_p0" in vals else wp_fixed
            return init.replace(i0=i0, c=_c_from_omega_p0(i0, wp))

    def residuals(x):
        p = build(x)
        return _penalized((spectrum_model(p, i_center, grid, cache, strict=False) - omega) / weight)

    res = least_squares_engine(residuals, x0, bounds=(1e-6, np.inf), max_iter=max_iter,
                               names=names, absolute_sigma=sigma is not None)
    res = _finish(res, names, scale)
    if parameterization == "omega_p0":
        vals = dict(zip(names, res.values))
        res.extra["c"] = _c_from_omega_p0(vals.get("i0", init.i0), vals.get("omega_p0", wp_fixed))
    return res


@dataclass(frozen=True)
class LinewidthComponents:
    """The two inverse-time terms of the coherence-time model (1/s), per bias."""

    i: np.ndarray
    escape: np.ndarray  # Gamma_1
    noise: np.ndarray  # 2 sigma_I |d omega_01 / dI|

    @property
    def tau(self) -> np.ndarray:
        return 1.0 / (self.escape + self.noise)

    def crossover(self) -> Optional[float]:
        """Bias where the two terms are equal (linear interpolation), if bracketed."""
        with np.errstate(divide="ignore"):
            d = np.log(self.escape) - np.log(self.noise)
        k = np.flatnonzero(np.sign(d[:-1]) != np.sign(d[1:]))
        if len(k) == 0:
            return None
        k = int(k[0])
        return float(self.i[k] - d[k] * (self.i[k + 1] - self.i[k]) / (d[k + 1] - d[k]))


def linewidth_components(p: JunctionParams, i, sigma_i: float = 5e-9,
                         grid: Optional[GridConfig] = None, strict: bool = True) -> LinewidthComponents:
    """Escape and current-noise contributions to the 0 -> 1 linewidth.

    The slope uses one centered difference at a fixed step so that it varies
    smoothly with the junction parameters during a fit.
    """
    i = np.atleast_1d(np.asarray(i, dtype=float))
    esc = _per_point(lambda b: tunnel_rate(p, b, 1), i, strict)
    if sigma_i == 0:
        noise = np.zeros_like(esc)
    else:
        slope = lambda b: transition_slopes(p, b, grid, max_halvings=0)[(0, 1)]
        noise = 2.0 * sigma_i * np.abs(_per_point(slope, i, strict))
    return LinewidthComponents(i=i, escape=esc, noise=noise)


def fit_linewidth(
    i,
    tau,
    init: JunctionParams,
    sigma_tau: Optional[Sequence[float]] = None,
    sigma_i: float = 5e-9,
    free: Sequence[str] = ("i0", "c"),
    grid: Optional[GridConfig] = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Fit tau(I) = 1 / (Gamma_1 + 2 sigma_I |d omega_01/dI|) with sigma_I held fixed.

    The dissipative 1/RC term is dropped, assuming RC is long compared with
    the noise time. Residuals are in log tau. ``extra["components"]`` holds
    the two terms at the fitted parameters.
    """
    i = np.asarray(i, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if len(i) < 4 or len(i) != len(tau):
        raise ValueError("need at least 4 (current, tau) points of equal length")
    if np.any(tau <= 0):
        raise ValueError("coherence times must be positive")
    if sigma_i < 0:
        raise ValueError("sigma_i must be non-negative")
    free, x0 = _free_setup(init, free, ("i0", "c"))
    rel = None if sigma_tau is None else np.asarray(sigma_tau, dtype=float) / tau

    def residuals(x):
        p = _params(init, free, x)
        model = linewidth_components(p, i, sigma_i, grid, strict=False).tau
        r = np.log(model) - np.log(tau)
        return _penalized(r if rel is None else r / rel)

    res = least_squares_engine(residuals, x0, bounds=(1e-6, np.inf), max_iter=max_iter,
                               names=free, absolute_sigma=rel is not None)
    res = _finish(res, free, _JUNCTION_UNITS)
    p_fit = init.replace(**dict(zip(free, res.values.tolist())))
    res.extra["components"] = linewidth_components(p_fit, i, sigma_i, grid)
    return res
