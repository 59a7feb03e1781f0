"""Bias-isolation network: series inductor into a capacitively shunted 50 ohm line.

The junction looks into ``j omega L + (Z_line || 1/(j omega C_shunt))``. The
dissipative part of that load, expressed as an equivalent parallel resistor,
is what damps the junction's plasma oscillation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetworkParams:
    l_series: float = 10e-9
    c_shunt: float = 10e-12
    z_line: float = 50.0

    def __post_init__(self):
        for name in ("l_series", "c_shunt", "z_line"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def external_impedance(n: NetworkParams, omega):
    """Complex impedance (ohm) seen from the junction terminals; vectorized in omega."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("omega must be non-negative")
    z_shunt = n.z_line / (1.0 + 1j * omega * n.c_shunt * n.z_line)
    z = 1j * omega * n.l_series + z_shunt
    return z if z.ndim else complex(z)


def effective_parallel_resistance(n: NetworkParams, omega):
    """Equivalent parallel resistance 1 / Re[1/Z(omega)] (ohm).

    Returns ``inf`` where the load is lossless. At omega = 0 this is exactly
    ``z_line``.
    """
    y = 1.0 / external_impedance(n, omega)
    g = np.real(y)
    with np.errstate(divide="ignore"):
        r = np.where(g > 0, 1.0 / np.where(g > 0, g, 1.0), np.inf)
    return r if r.ndim else float(r)
