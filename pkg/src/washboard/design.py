"""How many levels a qubit well needs for a target number of gate operations.

Requiring that ground-to-first-excited tunneling not spoil ``n_op`` gates of
``n_g`` plasma periods each, ``n_op n_g (2 pi / omega) Gamma_1 < 1``, and using
the cubic-well tunneling law with omega ~ omega_p, gives

    N_s > (5/36) ln(n_op n_g) + (5/24) ln(432 N_s)

which is solved as a fixed point. Keeping the 1/sqrt(2 pi) prefactor of the
tunneling law adds (5/72) ln(2 pi) to the right-hand side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from washboard.eigensolver import GridConfig, solve_levels, transition_frequency
from washboard.errors import ConvergenceError, NoBoundLevel
from washboard.junction import JunctionParams
from washboard.rates import tunnel_rate

_PREFACTOR_TERM = (5.0 / 72.0) * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DesignInput:
    n_op: float
    n_g: float = 10.0

    def __post_init__(self):
        if not self.n_op >= 1:
            raise ValueError("n_op must be at least 1")
        if not self.n_g >= 1:
            raise ValueError("n_g must be at least 1")


@dataclass(frozen=True)
class DesignReport:
    n_op: float
    n_g: float
    #: real-valued fixed point of the level criterion
    fixed_point: float
    #: smallest whole number of levels satisfying it
    ceiling: int
    #: fixed point with the 1/sqrt(2 pi) prefactor kept
    fixed_point_exact: float
    iterations: int
    residual: float


def _fixed_point(const: float, tol: float = 1e-10, max_iter: int = 200) -> tuple[float, int]:
    # f(N) = const + (5/24) ln(432 N); |f'| = 5/(24 N) < 1 on N >= 1
    n = 1.0
    for k in range(1, max_iter + 1):
        nxt = const + (5.0 / 24.0) * math.log(432.0 * n)
        if abs(nxt - n) <= tol * abs(nxt):
            return nxt, k
        n = nxt
    raise ConvergenceError("level criterion fixed point did not converge")


def min_levels(d: DesignInput) -> DesignReport:
    """Minimum N_s for ``d.n_op`` operations of ``d.n_g`` periods each."""
    base = (5.0 / 36.0) * math.log(d.n_op * d.n_g)
    n, k = _fixed_point(base)
    exact, _ = _fixed_point(base + _PREFACTOR_TERM)
    residual = abs(n - base - (5.0 / 24.0) * math.log(432.0 * n))
    return DesignReport(d.n_op, d.n_g, n, math.ceil(n), exact, k, residual)


def operations_budget(p: JunctionParams, i: float, n_g: float = 10.0,
                      grid: Optional[GridConfig] = None) -> float:
    """Gate operations before |1> tunnels out: 1 / (n_g (2 pi / omega_01) Gamma_1).

    Returns ``inf`` when Gamma_1 underflows to zero.

    Raises
    ------
    NoBoundLevel
        If the well holds fewer than two levels.
    """
    if not n_g >= 1:
        raise ValueError("n_g must be at least 1")
    sol = solve_levels(p, i, grid)
    if sol.n_levels < 2:
        raise NoBoundLevel(f"need two levels for a qubit at I = {i:.6g} A")
    w01 = transition_frequency(sol, 0, 1)
    g1 = tunnel_rate(p, i, 1)
    if g1 == 0.0:
        return math.inf
    return w01 / (2.0 * math.pi * n_g * g1)
