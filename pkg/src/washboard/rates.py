"""Transition and escape rates, the resonance linewidth model and level populations.

Tunneling out of level n uses the cubic-well semiclassical law

    Gamma_n = omega_p (432 N_s)^(n + 1/2) / (sqrt(2 pi) n!) exp(-36 N_s / 5)

and the 0 <-> 1 dissipative rates are those of a harmonic oscillator damped by
the shunt R at temperature T. Transitions between other level pairs are scaled
by |<i|gamma|j>|^2 / |<0|gamma|1>|^2, the ratio of the dipole couplings.

Populations for the escape rate come from a quasi-steady rate balance: the
slowest-decaying eigenmode of the master equation including tunneling loss.
That reduces to the Boltzmann distribution when tunneling is slow compared with
relaxation and depletes leaky upper levels otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import voigt_profile

from washboard.constants import CONSTANTS
from washboard.eigensolver import GridConfig, LevelSolution, solve_levels, transition_frequency, transition_slopes
from washboard.errors import ConvergenceError, NoBoundLevel, SingularBalance
from washboard.junction import JunctionParams, _check_trapped, level_count_ns, plasma_frequency
from washboard.network import NetworkParams, effective_parallel_resistance

#: the master equation keeps |0>, |1>, |2> only; the tunneling law is not meant for higher levels
BALANCE_LEVELS = 3
#: ground-state tunneling is kept in the 0 -> 1 linewidth only above this fraction
GROUND_ESCAPE_CUTOFF = 0.01
_GAUSS_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class EnvironmentParams:
    """Electromagnetic environment.

    ``r`` fixes the shunt resistance (ohm) at every frequency. When it is
    ``None`` the shunt is the isolation network's effective parallel
    resistance at the transition frequency in question.
    """

    r: Optional[float] = None
    sigma_i: float = 5e-9
    network: NetworkParams = field(default_factory=NetworkParams)

    def __post_init__(self):
        if self.r is not None and not self.r > 0:
            raise ValueError("shunt resistance must be positive")
        if not self.sigma_i >= 0:
            raise ValueError("current noise must be non-negative")

    def shunt_resistance(self, omega: float) -> float:
        if self.r is not None:
            return self.r
        return float(effective_parallel_resistance(self.network, omega))

    def replace(self, **changes) -> "EnvironmentParams":
        fields = {"r": self.r, "sigma_i": self.sigma_i, "network": self.network}
        fields.update(changes)
        return EnvironmentParams(**fields)


@dataclass(frozen=True)
class DriveParams:
    i_ac: float
    omega_d: float

    def __post_init__(self):
        if not self.i_ac >= 0:
            raise ValueError("drive amplitude must be non-negative")
        if not self.omega_d > 0:
            raise ValueError("drive frequency must be positive")


@dataclass(frozen=True)
class Linewidth:
    """Resonance full width (rad/s) split into its addends."""

    dissipative: float
    escape: float
    noise: float

    @property
    def total(self) -> float:
        return self.dissipative + self.escape + self.noise


@dataclass(frozen=True)
class RateSet:
    tunnel: np.ndarray
    up01: float
    down10: float
    populations: np.ndarray
    total: float


def tunnel_rate(p: JunctionParams, i: float, level: int) -> float:
    """Macroscopic quantum tunneling rate out of ``level`` (1/s)."""
    _check_trapped(p, i)
    if level < 0:
        raise IndexError("level must be non-negative")
    ns = level_count_ns(p, i)
    wp = plasma_frequency(p, i)
    log_rate = (
        math.log(wp)
        + (level + 0.5) * math.log(432.0 * ns)
        - 0.5 * math.log(2.0 * math.pi)
        - math.lgamma(level + 1)
        - 36.0 * ns / 5.0
    )
    return math.exp(log_rate)


def _rc_rate(p: JunctionParams, env: EnvironmentParams, dE: float) -> float:
    r = env.shunt_resistance(dE / CONSTANTS.hbar)
    return 0.0 if math.isinf(r) else 1.0 / (r * p.c)


def thermal_up_rate(p: JunctionParams, env: EnvironmentParams, dE: float) -> float:
    """Thermally activated 0 -> 1 rate 1 / (RC (exp(dE/kT) - 1))."""
    if not dE > 0:
        raise ValueError("level spacing must be positive")
    if p.t == 0:
        return 0.0
    x = dE / (CONSTANTS.boltzmann * p.t)
    if x > 700:
        return 0.0
    return _rc_rate(p, env, dE) / math.expm1(x)


def thermal_down_rate(p: JunctionParams, env: EnvironmentParams, dE: float) -> float:
    """Dissipative 1 -> 0 rate 1 / (RC (1 - exp(-dE/kT))); exactly 1/RC at T = 0."""
    if not dE > 0:
        raise ValueError("level spacing must be positive")
    base = _rc_rate(p, env, dE)
    if p.t == 0:
        return base
    x = dE / (CONSTANTS.boltzmann * p.t)
    return base / -math.expm1(-x)


def boltzmann_populations(sol: LevelSolution, t: float) -> np.ndarray:
    """Thermal-equilibrium occupation of the retained levels."""
    if t == 0:
        out = np.zeros(sol.n_levels)
        out[0] = 1.0
        return out
    w = np.exp(-(sol.energies - sol.energies[0]) / (CONSTANTS.boltzmann * t))
    return w / w.sum()


def total_escape_rate(p: JunctionParams, i: float, sol: LevelSolution, populations) -> float:
    """Observed escape rate sum_n Gamma_n P_n (1/s)."""
    populations = np.asarray(populations, dtype=float)
    if len(populations) > sol.n_levels:
        raise ValueError("more populations than levels")
    return float(sum(pn * tunnel_rate(p, i, n) for n, pn in enumerate(populations) if pn > 0))


def microwave_rate(
    sol: LevelSolution,
    drive: DriveParams,
    i: int,
    j: int,
    linewidth: float,
    noise_width: float = 0.0,
) -> float:
    """Drive-induced i <-> j rate (1/s).

    With ``noise_width == 0`` the line is a Lorentzian of full width
    ``linewidth``, peaking at Omega^2 / linewidth where the Rabi frequency is
    Omega = (Phi_0/2pi) I_ac |<i|gamma|j>| / hbar. A positive ``noise_width``
    (Gaussian FWHM in rad/s) convolves that Lorentzian with quasi-static
    frequency jitter, giving a Voigt line of the same area.
    """
    if i == j:
        raise ValueError("transition needs two distinct levels")
    if not linewidth > 0:
        raise ValueError("linewidth must be positive")
    if noise_width < 0:
        raise ValueError("noise width must be non-negative")
    a, b = min(i, j), max(i, j)
    rabi = CONSTANTS.reduced_flux * drive.i_ac * abs(sol.gamma_matrix[a, b]) / CONSTANTS.hbar
    detuning = drive.omega_d - transition_frequency(sol, a, b)
    half = 0.5 * linewidth
    if noise_width == 0:
        return 0.5 * rabi**2 * half / (detuning**2 + half**2)
    sigma = noise_width / _GAUSS_FWHM
    return 0.5 * rabi**2 * math.pi * float(voigt_profile(detuning, sigma, half))


def _coupling_ratio(sol: LevelSolution, a: int, b: int) -> float:
    return (sol.gamma_matrix[a, b] / sol.gamma_matrix[0, 1]) ** 2


def _relaxation(p, env, sol, a, b):
    """Down (b -> a) and up (a -> b) dissipative rates for levels a < b."""
    dE = sol.energies[b] - sol.energies[a]
    scale = _coupling_ratio(sol, a, b)
    return scale * thermal_down_rate(p, env, dE), scale * thermal_up_rate(p, env, dE)


def linewidth(
    p: JunctionParams,
    env: EnvironmentParams,
    i: float,
    sol: LevelSolution,
    pair: tuple[int, int] = (0, 1),
    slope: Optional[float] = None,
    grid: Optional[GridConfig] = None,
) -> Linewidth:
    """Full width of the ``pair`` resonance: 1/RC + escape + 2 sigma_I |d omega/dI|.

    For the default 0 -> 1 pair the dissipative term is 1/(R(omega_01) C) and
    the escape term is Gamma_1, plus Gamma_0 when it exceeds 1% of the total.
    For higher pairs both levels' zero-temperature decay rates and both
    tunneling rates enter the same way. ``slope`` is d omega_ij / dI; it is
    computed from the eigensolver when omitted.
    """
    a, b = pair
    if not (0 <= a < b < sol.n_levels):
        raise IndexError(f"pair {pair} not available with {sol.n_levels} levels")
    t0 = p.replace(t=0.0)
    dissipative = 0.0
    for k in (a, b):
        for lower in range(k):
            dissipative += _relaxation(t0, env, sol, lower, k)[0]
    upper = tunnel_rate(p, i, b)
    lower_escape = tunnel_rate(p, i, a)
    if slope is None:
        slope = transition_slopes(p, i, grid, pairs=(pair,))[pair]
    noise = 2.0 * env.sigma_i * abs(slope)
    escape = upper
    if lower_escape >= GROUND_ESCAPE_CUTOFF * (dissipative + upper + lower_escape + noise):
        escape += lower_escape
    return Linewidth(dissipative=dissipative, escape=escape, noise=noise)


def coherence_time(width: float) -> float:
    """Spectroscopic coherence time 1 / Delta omega (s)."""
    if not width > 0:
        raise ValueError("linewidth must be positive")
    return 1.0 / width


def rate_matrix(
    p: JunctionParams,
    env: EnvironmentParams,
    i: float,
    sol: LevelSolution,
    drive: Optional[DriveParams] = None,
    widths: Optional[dict] = None,
    n_levels: Optional[int] = None,
    lineshape: str = "voigt",
) -> np.ndarray:
    """Master-equation generator M with dP/dt = M P; columns lose weight to tunneling.

    ``widths`` maps level pairs to their :class:`Linewidth`; it is required
    when a drive with nonzero amplitude is given. ``lineshape`` selects how
    the current-noise part of each width enters the drive rate: ``"voigt"``
    treats it as Gaussian smearing, ``"lorentzian"`` lumps it into a single
    Lorentzian of the total width.
    """
    if lineshape not in ("voigt", "lorentzian"):
        raise ValueError(f"unknown lineshape {lineshape!r}")
    n = min(sol.n_levels, n_levels or BALANCE_LEVELS)
    m = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            down, up = _relaxation(p, env, sol, a, b)
            m[a, b] += down
            m[b, a] += up
            if drive is not None and drive.i_ac > 0:
                lw = widths[(a, b)]
                if lineshape == "voigt":
                    w = microwave_rate(sol, drive, a, b, lw.dissipative + lw.escape, lw.noise)
                else:
                    w = microwave_rate(sol, drive, a, b, lw.total)
                m[a, b] += w
                m[b, a] += w
    out = m.sum(axis=0)
    for k in range(n):
        m[k, k] = -(out[k] + tunnel_rate(p, i, k))
    return m


def quasi_steady_populations(m: np.ndarray) -> np.ndarray:
    """Normalized slowest-decaying mode of the generator ``m``."""
    if m.shape == (1, 1):
        return np.ones(1)
    vals, vecs = np.linalg.eig(m)
    k = int(np.argmax(vals.real))
    v = np.abs(vecs[:, k].real)
    return v / v.sum()


def rate_set(
    p: JunctionParams,
    env: EnvironmentParams,
    i: float,
    sol: Optional[LevelSolution] = None,
    closure: str = "balance",
    grid: Optional[GridConfig] = None,
) -> RateSet:
    """All undriven rates at bias ``i``.

    ``closure`` chooses the populations: ``"balance"`` (quasi-steady master
    equation, default) or ``"boltzmann"``.
    """
    sol = sol or solve_levels(p, i, grid)
    tunnel = np.array([tunnel_rate(p, i, k) for k in range(sol.n_levels)])
    if sol.n_levels > 1:
        dE = sol.energies[1] - sol.energies[0]
        up, down = thermal_up_rate(p, env, dE), thermal_down_rate(p, env, dE)
    else:
        up = down = 0.0
    if closure == "boltzmann":
        pops = boltzmann_populations(sol, p.t)
    elif closure == "balance":
        pops = quasi_steady_populations(rate_matrix(p, env, i, sol))
    else:
        raise ValueError(f"unknown closure {closure!r}")
    return RateSet(tunnel=tunnel, up01=up, down10=down, populations=pops,
                   total=total_escape_rate(p, i, sol, pops))


def escape_rate(
    p: JunctionParams,
    env: EnvironmentParams,
    i: float,
    grid: Optional[GridConfig] = None,
    closure: str = "balance",
) -> float:
    """Undriven escape rate at bias ``i`` (1/s)."""
    return rate_set(p, env, i, closure=closure, grid=grid).total


def drive_widths(
    p: JunctionParams,
    env: EnvironmentParams,
    sol: LevelSolution,
    grid: Optional[GridConfig] = None,
    n_levels: Optional[int] = None,
) -> tuple[dict, int]:
    """:class:`Linewidth` for every pair in the balance, and the level count actually usable.

    Levels that disappear within the finite-difference step are dropped from
    the balance rather than failing the whole bias point.
    """
    n = min(sol.n_levels, n_levels or BALANCE_LEVELS)
    while n >= 2:
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        try:
            slopes = transition_slopes(p, sol.i, grid, pairs=pairs)
        except NoBoundLevel:
            n -= 1
            continue
        widths = {pr: linewidth(p, env, sol.i, sol, pr, slope=slopes[pr]) for pr in pairs}
        return widths, n
    raise NoBoundLevel(f"fewer than two stable levels around I = {sol.i:.6g} A")


def driven_escape_rate(
    p: JunctionParams,
    env: EnvironmentParams,
    drive: DriveParams,
    sol: LevelSolution,
    grid: Optional[GridConfig] = None,
    widths: Optional[tuple[dict, int]] = None,
    lineshape: str = "voigt",
) -> tuple[float, float, np.ndarray]:
    """Escape rates with and without drive, and the driven populations.

    Returns ``(gamma_m, gamma_0, populations_m)``. With fewer than two usable
    levels the drive has nothing to excite and both rates coincide.
    """
    i = sol.i
    try:
        widths, n = widths or drive_widths(p, env, sol, grid)
    except NoBoundLevel:
        rs = rate_set(p, env, i, sol)
        return rs.total, rs.total, rs.populations
    m0 = rate_matrix(p, env, i, sol, n_levels=n)
    mm = rate_matrix(p, env, i, sol, drive, widths, n_levels=n, lineshape=lineshape)
    g0 = total_escape_rate(p, i, sol, quasi_steady_populations(m0))
    popsm = quasi_steady_populations(mm)
    gm = total_escape_rate(p, i, sol, popsm)
    if not g0 > 0:
        raise SingularBalance(f"no escape channel at I = {i:.6g} A")
    return gm, g0, popsm


def steady_state_enhancement(
    p: JunctionParams,
    env: EnvironmentParams,
    drive: DriveParams,
    sol: LevelSolution,
    grid: Optional[GridConfig] = None,
    lineshape: str = "voigt",
) -> float:
    """Relative escape-rate enhancement (Gamma_m - Gamma_0) / Gamma_0 under the drive."""
    if sol.n_levels < 2:
        raise NoBoundLevel("enhancement needs at least two levels")
    if drive.i_ac == 0:
        return 0.0
    gm, g0, _ = driven_escape_rate(p, env, drive, sol, grid, lineshape=lineshape)
    return gm / g0 - 1.0


def enhancement_curve(
    p: JunctionParams,
    env: EnvironmentParams,
    drive: DriveParams,
    biases,
    grid: Optional[GridConfig] = None,
    lineshape: str = "voigt",
) -> np.ndarray:
    """Model Delta Gamma / Gamma_0 over a bias sweep; zero where fewer than two levels exist."""
    out = []
    for i in np.asarray(biases, dtype=float):
        sol = solve_levels(p, i, grid)
        if sol.n_levels < 2 or drive.i_ac == 0:
            out.append(0.0)
            continue
        gm, g0, _ = driven_escape_rate(p, env, drive, sol, grid, lineshape=lineshape)
        out.append(gm / g0 - 1.0)
    return np.array(out)


def calibrate_drive(
    p: JunctionParams,
    env: EnvironmentParams,
    omega_d: float,
    biases,
    target: float = 10.0,
    grid: Optional[GridConfig] = None,
    lineshape: str = "voigt",
) -> DriveParams:
    """Drive amplitude whose peak enhancement over ``biases`` equals ``target``.

    In the perturbative regime the enhancement scales as I_ac^2, which seeds
    a secant iteration in log amplitude.
    """
    biases = np.asarray(biases, dtype=float)
    sols = [solve_levels(p, i, grid) for i in biases]

    def widths_or_none(s):
        if s.n_levels < 2:
            return None
        try:
            return drive_widths(p, env, s, grid)
        except NoBoundLevel:
            return None

    cache = [widths_or_none(s) for s in sols]

    def peak(i_ac):
        d = DriveParams(i_ac, omega_d)
        best = 0.0
        for s, w in zip(sols, cache):
            if w is None:
                continue
            gm, g0, _ = driven_escape_rate(p, env, d, s, grid, widths=w, lineshape=lineshape)
            best = max(best, gm / g0 - 1.0)
        return best

    i_ac = 1e-10
    for _ in range(60):
        e = peak(i_ac)
        if e <= 0:
            raise ValueError("drive produces no enhancement over the given biases")
        if abs(e / target - 1.0) < 1e-6:
            return DriveParams(i_ac, omega_d)
        e2 = peak(i_ac * 1.01)
        slope = math.log(e2 / e) / math.log(1.01)
        step = math.log(target / e) / max(slope, 0.25)
        i_ac *= math.exp(max(min(step, 3.0), -3.0))
    raise ConvergenceError("drive calibration did not converge")
