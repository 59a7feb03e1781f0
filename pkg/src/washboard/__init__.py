"""Metastable levels, escape rates and spectroscopic coherence of a
current-biased Josephson junction.

All quantities are SI internally; unit conversion happens in
:mod:`washboard.config` and the CLI.
"""

from washboard.constants import CONSTANTS, PhysicalConstants
from washboard.errors import (
    BiasAboveCritical,
    ConfigError,
    ConvergenceError,
    NoBoundLevel,
    SingularBalance,
    WashboardError,
)
from washboard.junction import (
    BiasPoint,
    JunctionParams,
    barrier_height,
    level_count_ns,
    plasma_frequency,
    potential,
    well_extrema,
)
from washboard.eigensolver import GridConfig, LevelSolution, domega_di, solve_levels, transition_frequency
from washboard.network import NetworkParams, effective_parallel_resistance, external_impedance
from washboard.rates import (
    DriveParams,
    EnvironmentParams,
    RateSet,
    boltzmann_populations,
    coherence_time,
    linewidth,
    microwave_rate,
    rate_set,
    steady_state_enhancement,
    thermal_down_rate,
    thermal_up_rate,
    total_escape_rate,
    tunnel_rate,
)
from washboard.design import DesignInput, min_levels, operations_budget

__version__ = "0.1.0"

__all__ = [
    "BiasAboveCritical",
    "BiasPoint",
    "CONSTANTS",
    "ConfigError",
    "ConvergenceError",
    "DesignInput",
    "DriveParams",
    "EnvironmentParams",
    "GridConfig",
    "JunctionParams",
    "LevelSolution",
    "NetworkParams",
    "NoBoundLevel",
    "PhysicalConstants",
    "RateSet",
    "SingularBalance",
    "WashboardError",
    "barrier_height",
    "boltzmann_populations",
    "coherence_time",
    "domega_di",
    "effective_parallel_resistance",
    "external_impedance",
    "level_count_ns",
    "linewidth",
    "microwave_rate",
    "min_levels",
    "operations_budget",
    "plasma_frequency",
    "potential",
    "rate_set",
    "solve_levels",
    "steady_state_enhancement",
    "thermal_down_rate",
    "thermal_up_rate",
    "total_escape_rate",
    "transition_frequency",
    "tunnel_rate",
    "well_extrema",
]
