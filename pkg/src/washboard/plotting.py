"""PNG figures rendered next to the CLI's delimited output.

Uses :class:`matplotlib.figure.Figure` directly, so no pyplot state or GUI
backend is involved and the functions are safe to call from threads.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

_RC = {"figsize": (5.0, 3.6), "dpi": 144}


def _save(fig: Figure, path) -> Path:
    for ax in fig.axes:
        if ax.get_xscale() == "linear":
            ax.xaxis.set_major_locator(MaxNLocator(5))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_levels(i, f01, f12, path) -> Path:
    """Transition frequencies (GHz) against bias (uA)."""
    fig = Figure(**_RC)
    ax = fig.add_subplot()
    ax.plot(np.asarray(i) * 1e6, np.asarray(f01) / 1e9, label=r"$\omega_{01}/2\pi$")
    ax.plot(np.asarray(i) * 1e6, np.asarray(f12) / 1e9, "--", label=r"$\omega_{12}/2\pi$")
    ax.set_xlabel(r"bias current ($\mu$A)")
    ax.set_ylabel("frequency (GHz)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_rates(i, total, components: dict, tau, path) -> Path:
    fig = Figure(figsize=(5.0, 6.0), dpi=_RC["dpi"])
    top, bottom = fig.subplots(2, 1, sharex=True)
    x = np.asarray(i) * 1e6
    top.semilogy(x, total, "k", label="total escape")
    top.set_ylabel(r"rate (s$^{-1}$)")
    top.legend(frameon=False)
    for name, y in components.items():
        bottom.semilogy(x, y, label=name)
    bottom.semilogy(x, 1.0 / np.asarray(tau), "k", lw=2, label=r"$1/\tau$")
    bottom.set_xlabel(r"bias current ($\mu$A)")
    bottom.set_ylabel(r"linewidth (rad s$^{-1}$)")
    bottom.legend(frameon=False, fontsize=7)
    return _save(fig, path)


def plot_impedance(f, r_eff, path, floor: float = 1e3) -> Path:
    fig = Figure(**_RC)
    ax = fig.add_subplot()
    ax.loglog(np.asarray(f) / 1e9, r_eff)
    ax.axhline(floor, color="0.6", ls=":", lw=1)
    ax.set_xlabel("frequency (GHz)")
    ax.set_ylabel(r"$R_\mathrm{eff}$ ($\Omega$)")
    return _save(fig, path)


def plot_escape_curve(i, gamma, sigma, path, model: Optional[Sequence[float]] = None) -> Path:
    fig = Figure(**_RC)
    ax = fig.add_subplot()
    x = np.asarray(i) * 1e6
    ax.errorbar(x, gamma, yerr=sigma, fmt=".", ms=3, elinewidth=0.6, label="estimate")
    if model is not None:
        ax.plot(x, model, "r", lw=1, label="model")
    ax.set_yscale("log")
    ax.set_xlabel(r"bias current ($\mu$A)")
    ax.set_ylabel(r"$\Gamma$ (s$^{-1}$)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_scan(i, enhancement, sigma, path, model_i=None, model=None, centers=()) -> Path:
    fig = Figure(**_RC)
    ax = fig.add_subplot()
    ax.errorbar(np.asarray(i) * 1e6, enhancement, yerr=sigma, fmt=".", ms=3, elinewidth=0.6)
    if model is not None:
        ax.plot(np.asarray(model_i) * 1e6, model, "r", lw=1)
    for c in centers:
        ax.axvline(c * 1e6, color="0.6", ls=":", lw=1)
    ax.set_xlabel(r"bias current ($\mu$A)")
    ax.set_ylabel(r"$\Delta\Gamma/\Gamma_0$")
    return _save(fig, path)


def plot_fit(x, data, model, path, xlabel: str, ylabel: str, logy: bool = False,
             sigma=None, xscale: float = 1e6) -> Path:
    fig = Figure(**_RC)
    ax = fig.add_subplot()
    xs = np.asarray(x) * xscale
    ax.errorbar(xs, data, yerr=sigma, fmt="o", ms=3, label="data")
    ax.plot(xs, model, "r", lw=1, label="fit")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_design(n_op, fixed_point, path) -> Path:
    fig = Figure(**_RC)
    ax = fig.add_subplot()
    ax.semilogx(n_op, fixed_point, "o-", ms=3)
    ax.set_xlabel(r"target operations $N_\mathrm{op}$")
    ax.set_ylabel(r"minimum levels $N_s^*$")
    return _save(fig, path)
