"""Monte Carlo escape times for a linearly ramped bias current.

Each trial is the first event of an inhomogeneous Poisson process whose
intensity is the escape rate at the instantaneous bias
``I(t) = i_start + di_dt * t``. The integrated hazard is tabulated once on an
adaptive grid; each trial then draws ``E = -ln u`` and bisects
``Lambda(t) = E``.

Random streams
--------------
Trial ``k`` of a run with seed ``s`` uses the first double of the Philox4x64
block with key ``s`` and counter ``k``. A contiguous chunk of trials starting
at ``k0`` is therefore every fourth double of ``Philox(key=s, counter=k0)``,
so any split of the trials over workers reproduces the serial run exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from washboard.eigensolver import GridConfig, solve_levels
from washboard.errors import BiasAboveCritical, NoBoundLevel
from washboard.junction import JunctionParams
from washboard.rates import DriveParams, EnvironmentParams, driven_escape_rate, rate_set

_TINY_RATE = 1e-300


@dataclass(frozen=True)
class RampConfig:
    i_start: float
    i_max: float
    di_dt: float = 5e-3
    n_trials: int = 10_000
    seed: int = 0
    #: freezes the hazard at this value (1/s), bypassing the junction model
    gamma_override: Optional[float] = None

    def __post_init__(self):
        if not self.di_dt > 0:
            raise ValueError("ramp rate must be positive")
        if not self.i_start < self.i_max:
            raise ValueError("i_start must be below i_max")
        if self.i_start < 0:
            raise ValueError("i_start must be non-negative")
        if self.n_trials < 1:
            raise ValueError("need at least one trial")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.gamma_override is not None and not self.gamma_override > 0:
            raise ValueError("gamma_override must be positive")

    @property
    def duration(self) -> float:
        return (self.i_max - self.i_start) / self.di_dt

    def current(self, t):
        return self.i_start + self.di_dt * np.asarray(t, dtype=float)

    def time_at(self, i):
        return (np.asarray(i, dtype=float) - self.i_start) / self.di_dt


@dataclass
class EscapeEventSet:
    """One escape time per trial, measured from the ramp start.

    Trials that reached ``i_max`` without escaping have ``escaped == False``
    and carry the ramp duration as their time.
    """

    timestamps: np.ndarray
    escaped: np.ndarray
    config: RampConfig
    meta: dict = field(default_factory=dict)

    @property
    def n_trials(self) -> int:
        return len(self.timestamps)

    @property
    def n_escaped(self) -> int:
        return int(np.count_nonzero(self.escaped))


@dataclass(frozen=True)
class HazardTable:
    """Hazard samples and cumulative integral on the adaptive time grid.

    ``t_end`` is where the table stops: the ramp end, or the washout point
    where no bound level survives (every remaining trial escapes there).
    """

    t: np.ndarray
    gamma: np.ndarray
    cumulative: np.ndarray
    washout: bool

    @property
    def t_end(self) -> float:
        return float(self.t[-1])


def _segment_integral(g0, g1, h):
    """Exact integral over a segment on which log(hazard) is linear."""
    g0 = np.maximum(g0, _TINY_RATE)
    g1 = np.maximum(g1, _TINY_RATE)
    b = np.log(g1 / g0)
    small = np.abs(b) < 1e-8
    safe = np.where(small, 1.0, b)
    return np.where(small, 0.5 * (g0 + g1) * h, (g1 - g0) * h / safe)


def hazard(
    p: JunctionParams,
    env: EnvironmentParams,
    ramp: RampConfig,
    t: float,
    drive: Optional[DriveParams] = None,
    grid: Optional[GridConfig] = None,
    lineshape: str = "voigt",
) -> float:
    """Escape rate (1/s) at ramp time ``t``.

    Undriven: quasi-steady thermal populations. Driven: the steady state
    including drive-induced transitions.

    Raises
    ------
    NoBoundLevel
        Once the bias leaves no metastable level.
    """
    if ramp.gamma_override is not None:
        return ramp.gamma_override
    i = float(ramp.current(t))
    if drive is None or drive.i_ac == 0:
        return rate_set(p, env, i, grid=grid).total
    sol = solve_levels(p, i, grid)
    return driven_escape_rate(p, env, drive, sol, grid, lineshape=lineshape)[0]


def build_hazard_table(
    rate: Callable[[float], float],
    t_end: float,
    n_initial: int = 1024,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    max_depth: int = 12,
    threads: int = 1,
) -> HazardTable:
    """Tabulate ``rate`` on [0, t_end] and integrate it.

    Segments are bisected until the log-trapezoid integral over each segment
    agrees with its two-half refinement to ``rtol`` of the running integral
    (plus ``atol``, a survival-probability scale below which errors cannot
    matter).
    """
    washout = False

    def safe_rate(t):
        try:
            return rate(t)
        except (NoBoundLevel, BiasAboveCritical):
            return math.nan

    def evaluate(ts):
        if threads > 1 and len(ts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return np.array(list(pool.map(safe_rate, ts)))
        return np.array([safe_rate(x) for x in ts])

    t = np.linspace(0.0, t_end, n_initial + 1)
    g = evaluate(t)
    bad = np.isnan(g)
    if bad.any():
        first = int(np.argmax(bad))
        if first == 0:
            raise NoBoundLevel("no metastable level at the start of the ramp")
        # ramp runs into washout: locate the last bound bias by bisection
        lo, hi = t[first - 1], t[first]
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if math.isnan(safe_rate(mid)):
                hi = mid
            else:
                lo = mid
        t = np.append(t[:first], lo)
        g = np.append(g[:first], safe_rate(lo))
        washout = True

    active = np.ones(len(t) - 1, dtype=bool)
    for _ in range(max_depth):
        if not active.any():
            break
        h = np.diff(t)
        seg = _segment_integral(g[:-1], g[1:], h)
        running = np.cumsum(seg)
        idx = np.flatnonzero(active)
        mids = t[idx] + 0.5 * h[idx]
        gm = evaluate(mids)
        fallback = np.sqrt(np.maximum(g[idx], _TINY_RATE) * np.maximum(g[idx + 1], _TINY_RATE))
        gm = np.where(np.isnan(gm), fallback, gm)
        fine = _segment_integral(g[idx], gm, 0.5 * h[idx]) + _segment_integral(gm, g[idx + 1], 0.5 * h[idx])
        failed = np.abs(fine - seg[idx]) > rtol * running[idx] + atol / len(h)
        # every evaluated midpoint goes into the table; halves of failed segments stay active
        n_old = len(t)
        t = np.concatenate((t, mids))
        g = np.concatenate((g, gm))
        order = np.argsort(t, kind="stable")
        t, g = t[order], g[order]
        flag = np.zeros(len(t) - 1, dtype=bool)
        pos = np.empty(len(order), dtype=int)
        pos[order] = np.arange(len(order))
        mid_pos = pos[n_old:]
        flag[mid_pos[failed] - 1] = True
        flag[mid_pos[failed]] = True
        active = flag

    cumulative = np.concatenate(([0.0], np.cumsum(_segment_integral(g[:-1], g[1:], np.diff(t)))))
    return HazardTable(t=t, gamma=g, cumulative=cumulative, washout=washout)


def invert_cumulative(table: HazardTable, targets: np.ndarray, iterations: int = 60) -> np.ndarray:
    """Times at which the integrated hazard reaches ``targets`` (nan past the table end)."""
    targets = np.asarray(targets, dtype=float)
    out = np.full(targets.shape, np.nan)
    inside = targets <= table.cumulative[-1]
    k = np.searchsorted(table.cumulative, targets[inside], side="right") - 1
    k = np.clip(k, 0, len(table.t) - 2)
    t0, t1 = table.t[k], table.t[k + 1]
    g0, g1 = table.gamma[k], table.gamma[k + 1]
    need = targets[inside] - table.cumulative[k]
    lo = np.zeros_like(t0)
    hi = t1 - t0
    b = np.log(np.maximum(g1, _TINY_RATE) / np.maximum(g0, _TINY_RATE)) / np.where(hi > 0, hi, 1.0)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        val = _segment_integral(g0, np.maximum(g0, _TINY_RATE) * np.exp(b * mid), mid)
        below = val < need
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out[inside] = t0 + 0.5 * (lo + hi)
    return out


def trial_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniforms in (0, 1] for trials ``start .. start + count - 1`` (see module notes)."""
    gen = np.random.Generator(np.random.Philox(key=seed, counter=start))
    return 1.0 - gen.random(4 * count)[::4]


def simulate_escapes(
    p: JunctionParams,
    env: EnvironmentParams,
    ramp: RampConfig,
    drive: Optional[DriveParams] = None,
    grid: Optional[GridConfig] = None,
    threads: int = 1,
    chunk: int = 65536,
    table: Optional[HazardTable] = None,
    lineshape: str = "voigt",
) -> EscapeEventSet:
    """Sample one escape time per trial; deterministic in ``ramp.seed``."""
    if table is None:
        table = build_hazard_table(
            lambda t: hazard(p, env, ramp, t, drive, grid, lineshape),
            ramp.duration,
            threads=threads,
        )
    starts = list(range(0, ramp.n_trials, chunk))

    def run(start):
        n = min(chunk, ramp.n_trials - start)
        e = -np.log(trial_uniforms(ramp.seed, start, n))
        return invert_cumulative(table, e)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    t = np.concatenate(parts)
    escaped = ~np.isnan(t)
    if table.washout:
        t[~escaped] = table.t_end
        escaped[:] = True
    else:
        t[~escaped] = ramp.duration
    meta = {
        "junction": asdict(p),
        "environment": {"r": env.r, "sigma_i": env.sigma_i, "network": asdict(env.network)},
        "drive": None if drive is None else asdict(drive),
        "washout": table.washout,
        "hazard_nodes": len(table.t),
    }
    return EscapeEventSet(timestamps=t, escaped=escaped, config=ramp, meta=meta)
