"""Stationary Schrodinger equation for the phase particle in one washboard well.

The Hamiltonian -(hbar^2 / 2m) d^2/dgamma^2 + U(gamma) is discretized with the
three-point second difference on a uniform grid with hard walls (psi = 0) at
both ends, giving a real symmetric tridiagonal eigenproblem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from washboard.constants import CONSTANTS
from washboard.errors import ConvergenceError, NoBoundLevel
from washboard.junction import JunctionParams, _check_trapped, potential, well_extrema

#: probability weight inside [gamma_lo, gamma_barrier] required to call a state metastable
LOCALIZATION_WEIGHT = 0.9


@dataclass(frozen=True)
class GridConfig:
    """Discretization of the phase axis.

    With ``auto_domain`` the walls sit at
    ``gamma_min - 3 w`` and ``gamma_barrier + w / 4`` where
    ``w = gamma_barrier - gamma_min``, clipped to one washboard period.
    Otherwise ``gamma_lo`` and ``gamma_hi`` are used as given.
    """

    n_points: int = 2001
    gamma_lo: Optional[float] = None
    gamma_hi: Optional[float] = None
    auto_domain: bool = True

    def __post_init__(self):
        if self.n_points < 201:
            raise ValueError(f"n_points must be >= 201, got {self.n_points}")
        if not self.auto_domain:
            if self.gamma_lo is None or self.gamma_hi is None:
                raise ValueError("explicit domain needs gamma_lo and gamma_hi")
            if not self.gamma_lo < self.gamma_hi:
                raise ValueError("gamma_lo must be below gamma_hi")

    def domain(self, p: JunctionParams, i: float) -> tuple[float, float]:
        g_min, g_bar = well_extrema(p, i)
        if not self.auto_domain:
            return float(self.gamma_lo), float(self.gamma_hi)
        w = g_bar - g_min
        lo = max(g_min - 3.0 * w, g_bar - 2.0 * np.pi)
        hi = g_bar + 0.25 * w
        return lo, hi

    def resolved(self, p: JunctionParams, i: float) -> "GridConfig":
        """Freeze the auto domain at bias ``i`` (used to share one grid across nearby biases)."""
        lo, hi = self.domain(p, i)
        return GridConfig(self.n_points, lo, hi, auto_domain=False)

    def refined(self) -> "GridConfig":
        return GridConfig(2 * self.n_points - 1, self.gamma_lo, self.gamma_hi, self.auto_domain)


@dataclass(frozen=True)
class LevelSolution:
    """Metastable levels at one bias point.

    ``wavefunctions[:, k]`` is the k-th state sampled on ``grid`` and scaled by
    sqrt(dgamma), so the columns are orthonormal unit vectors. The hard-wall
    endpoints are included as zeros.
    """

    i: float
    energies: np.ndarray
    wavefunctions: np.ndarray
    gamma_matrix: np.ndarray
    grid: np.ndarray
    u_min: float
    u_barrier: float
    weights: np.ndarray = field(repr=False)

    @property
    def n_levels(self) -> int:
        return len(self.energies)

    def frequency(self, i: int, j: int) -> float:
        return transition_frequency(self, i, j)


def solve_levels(p: JunctionParams, i: float, g: Optional[GridConfig] = None) -> LevelSolution:
    """Metastable eigenstates of the well at bias ``i``.

    Only states below the barrier top with more than 90% of their probability
    in ``[gamma_lo, gamma_barrier]`` are retained.

    Raises
    ------
    NoBoundLevel
        If no state passes the localization test.
    """
    _check_trapped(p, i)
    g = g or GridConfig()
    lo, hi = g.domain(p, i)
    g_min, g_bar = well_extrema(p, i)
    if not lo < g_min < g_bar <= hi:
        raise ValueError(f"domain [{lo:.4g}, {hi:.4g}] does not contain the well")

    gamma = np.linspace(lo, hi, g.n_points)
    h = gamma[1] - gamma[0]
    u_min = potential(p, i, g_min)
    u_bar = potential(p, i, g_bar)
    # energies measured from the well bottom keep the eigenproblem well scaled
    interior = gamma[1:-1]
    u = potential(p, i, interior) - u_min
    kin = CONSTANTS.hbar**2 / (2.0 * p.mass * h * h)
    scale = u_bar - u_min
    diag = (u + 2.0 * kin) / scale
    off = np.full(len(interior) - 1, -kin / scale)
    vals, vecs = eigh_tridiagonal(diag, off, select="v", select_range=(-np.inf, 1.0))
    if len(vals) == 0:
        raise NoBoundLevel(f"no eigenvalue below the barrier top at I = {i:.6g} A")

    inside = interior <= g_bar
    weights = np.sum(vecs[inside, :] ** 2, axis=0)
    keep = weights > LOCALIZATION_WEIGHT
    if not keep.any():
        raise NoBoundLevel(f"no localized level in the well at I = {i:.6g} A")

    vecs = vecs[:, keep]
    # fix the sign convention: positive lobe toward the barrier side of the minimum
    for k in range(vecs.shape[1]):
        j = np.argmax(np.abs(vecs[:, k]) * (interior >= g_min))
        if vecs[j, k] < 0:
            vecs[:, k] = -vecs[:, k]
    psi = np.zeros((g.n_points, vecs.shape[1]))
    psi[1:-1] = vecs
    gm = vecs.T @ (interior[:, None] * vecs)
    gm = 0.5 * (gm + gm.T)
    return LevelSolution(
        i=float(i),
        energies=vals[keep] * scale + u_min,
        wavefunctions=psi,
        gamma_matrix=gm,
        grid=gamma,
        u_min=float(u_min),
        u_barrier=float(u_bar),
        weights=weights[keep],
    )


def transition_frequency(sol: LevelSolution, i: int, j: int) -> float:
    """Angular frequency (E_j - E_i)/hbar of the i -> j transition (rad/s)."""
    if not (0 <= i < j < sol.n_levels):
        raise IndexError(f"need 0 <= i < j < {sol.n_levels}, got ({i}, {j})")
    return float((sol.energies[j] - sol.energies[i]) / CONSTANTS.hbar)


def transition_slopes(
    p: JunctionParams,
    i: float,
    g: Optional[GridConfig] = None,
    pairs: Iterable[tuple[int, int]] = ((0, 1),),
    rel_step: float = 1e-4,
    rtol: float = 1e-3,
    max_halvings: int = 12,
) -> dict[tuple[int, int], float]:
    """d omega_ij / dI (rad/s per A) by adaptive centered differences.

    The step starts at ``rel_step * i0`` and is halved until two successive
    estimates agree to ``rtol``. All three solves share the grid resolved at
    ``i`` so the discretization does not move with the bias. With
    ``max_halvings=0`` the first estimate is returned as is; it is then a
    smooth function of the junction parameters, which fits need.
    """
    g = (g or GridConfig()).resolved(p, i)
    pairs = tuple(pairs)
    need = max(j for _, j in pairs) + 1

    def freqs(bias):
        sol = solve_levels(p, bias, g)
        if sol.n_levels < need:
            raise NoBoundLevel(f"only {sol.n_levels} levels at I = {bias:.6g} A, need {need}")
        return np.array([transition_frequency(sol, a, b) for a, b in pairs])

    delta = rel_step * p.i0
    if i + delta >= p.i0:
        delta = 0.5 * (p.i0 - i)

    def estimate(d):
        return (freqs(i + d) - freqs(i - d)) / (2.0 * d)

    prev = estimate(delta)
    if max_halvings == 0:
        return dict(zip(pairs, prev.tolist()))
    for _ in range(max_halvings):
        delta *= 0.5
        cur = estimate(delta)
        if np.all(np.abs(cur - prev) <= rtol * np.abs(cur)):
            return dict(zip(pairs, cur.tolist()))
        prev = cur
    raise ConvergenceError(f"d omega/dI did not settle at I = {i:.6g} A")


def domega_di(p: JunctionParams, i: float, g: Optional[GridConfig] = None) -> float:
    """Sensitivity of the 0 -> 1 transition frequency to bias current (rad/s per A)."""
    return transition_slopes(p, i, g, pairs=((0, 1),))[(0, 1)]
