"""CODATA constants used throughout the package."""

from dataclasses import dataclass

from scipy import constants as _sc


@dataclass(frozen=True)
class PhysicalConstants:
    flux_quantum: float  # Wb, h/2e
    hbar: float  # J s
    boltzmann: float  # J/K

    @property
    def reduced_flux(self) -> float:
        """Phi_0 / 2 pi, the factor converting current times phase into energy."""
        return self.flux_quantum / (2.0 * _sc.pi)


CONSTANTS = PhysicalConstants(
    flux_quantum=_sc.h / (2.0 * _sc.e),
    hbar=_sc.hbar,
    boltzmann=_sc.k,
)
