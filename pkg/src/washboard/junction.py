"""Closed-form quantities of the tilted washboard potential.

The phase particle has potential

    U(gamma) = -(Phi_0 / 2 pi) (I_0 cos gamma + I gamma)

and kinetic coefficient (effective mass) m = C (Phi_0 / 2 pi)^2, so that the
small-oscillation frequency at the bottom of a well is sqrt(U''(gamma_min) / m).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from washboard.constants import CONSTANTS
from washboard.errors import BiasAboveCritical


@dataclass(frozen=True)
class JunctionParams:
    """Critical current ``i0`` (A), capacitance ``c`` (F), temperature ``t`` (K)."""

    i0: float
    c: float
    t: float = 0.0

    def __post_init__(self):
        if not self.i0 > 0:
            raise ValueError(f"critical current must be positive, got {self.i0}")
        if not self.c > 0:
            raise ValueError(f"capacitance must be positive, got {self.c}")
        if not self.t >= 0:
            raise ValueError(f"temperature must be non-negative, got {self.t}")

    @property
    def mass(self) -> float:
        """Effective mass of the phase coordinate, C (Phi_0/2pi)^2 (kg m^2 equivalent)."""
        return self.c * CONSTANTS.reduced_flux**2

    def replace(self, **changes) -> "JunctionParams":
        fields = {"i0": self.i0, "c": self.c, "t": self.t}
        fields.update(changes)
        return JunctionParams(**fields)


@dataclass(frozen=True)
class BiasPoint:
    i: float

    def check(self, p: JunctionParams) -> None:
        _check_trapped(p, self.i)


def _check_trapped(p: JunctionParams, i: float, allow_critical: bool = False) -> None:
    if i < 0:
        raise ValueError(f"bias current must be non-negative, got {i}")
    if i > p.i0 or (i == p.i0 and not allow_critical):
        raise BiasAboveCritical(f"bias {i:.6g} A is not below critical current {p.i0:.6g} A")


def potential(p: JunctionParams, i: float, gamma):
    """Washboard potential energy (J) at phase ``gamma`` (rad); vectorized in gamma."""
    gamma = np.asarray(gamma, dtype=float)
    out = -CONSTANTS.reduced_flux * (p.i0 * np.cos(gamma) + i * gamma)
    return out if out.ndim else float(out)


def potential_curvature(p: JunctionParams, i: float, gamma):
    """Second derivative U''(gamma) (J/rad^2)."""
    return CONSTANTS.reduced_flux * p.i0 * np.cos(gamma)


def well_extrema(p: JunctionParams, i: float) -> tuple[float, float]:
    """Return (gamma_min, gamma_barrier) of the well containing gamma = asin(I/I0)."""
    _check_trapped(p, i)
    g = float(np.arcsin(i / p.i0))
    return g, float(np.pi - g)


def barrier_height(p: JunctionParams, i: float) -> float:
    """Energy barrier Delta U (J) between the well bottom and the adjacent maximum."""
    _check_trapped(p, i, allow_critical=True)
    x = i / p.i0
    return float(p.i0 * CONSTANTS.flux_quantum / np.pi * (np.sqrt(1.0 - x * x) - x * np.arccos(x)))


def plasma_frequency(p: JunctionParams, i: float) -> float:
    """Small-oscillation angular frequency omega_p (rad/s) at the well bottom.

    Returns 0 exactly at ``i == i0`` (the degenerate limit) but every other
    operation treats that point as out of domain.
    """
    _check_trapped(p, i, allow_critical=True)
    x = i / p.i0
    return float(np.sqrt(2.0 * np.pi * p.i0 / (CONSTANTS.flux_quantum * p.c)) * (1.0 - x * x) ** 0.25)


def level_count_ns(p: JunctionParams, i: float) -> float:
    """N_s = Delta U / (hbar omega_p), roughly the number of levels in the well."""
    _check_trapped(p, i)
    return barrier_height(p, i) / (CONSTANTS.hbar * plasma_frequency(p, i))
