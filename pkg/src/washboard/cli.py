"""Command-line front end: ``washboard <command> --config run.json [options]``.

Commands write CSV and JSON into ``--out`` (default: the config's
``output_dir``) and, with ``--figures``, PNG plots next to them.

Exit status is 0 on success, 2 for invalid configuration or input, and 3 when
a numerical step fails to converge or the bias leaves no bound level.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from washboard import __version__
from washboard.analysis import (
    CurrentCalibration,
    EscapeRateCurve,
    build_histogram,
    enhancement_scan,
    escape_rate_estimate,
    fit_lorentzians,
    histogram_from_counts,
    to_current_axis,
)
from washboard.config import ExperimentConfig, config_hash, load_config
from washboard.design import DesignInput, min_levels
from washboard.eigensolver import domega_di, solve_levels, transition_frequency
from washboard.errors import BiasAboveCritical, ConfigError, ConvergenceError, NoBoundLevel, SingularBalance
from washboard.fitting import (
    FitResult,
    escape_curve_model,
    fit_escape_curve,
    fit_linewidth,
    fit_spectrum,
    spectrum_model,
)
from washboard.io import read_csv, read_events, write_csv, write_events, write_json
from washboard.junction import level_count_ns
from washboard.network import effective_parallel_resistance, external_impedance
from washboard.ramp import simulate_escapes
from washboard.rates import calibrate_drive, linewidth, rate_set

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Run:
    """Shared state of one command invocation."""

    def __init__(self, args, cfg: Optional[ExperimentConfig], fallback_doc: Optional[dict] = None):
        self.args = args
        self.cfg = cfg
        self.sha = cfg.sha256 if cfg is not None else config_hash(fallback_doc or {})
        out = args.out or (str(cfg.output_dir) if cfg is not None else "out")
        self.out = Path(out)
        self.threads = max(1, args.threads)
        self.figures = args.figures
        self.written: list[Path] = []

    def map(self, fn: Callable, items: Sequence):
        """Ordered map, threaded when ``--threads`` > 1."""
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def csv(self, name, schema, header, columns, extra=None):
        self.written.append(write_csv(self.out / name, schema, header, columns, self.sha, extra))

    def json(self, name, schema, payload):
        self.written.append(write_json(self.out / name, schema, payload, self.sha))

    def figure(self, fn_name: str, name, *a, **kw):
        # matplotlib is imported only when figures are requested
        if self.figures:
            from washboard import plotting
            self.written.append(getattr(plotting, fn_name)(*a, path=self.out / name, **kw))


def _need_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _biases(args, cfg: ExperimentConfig) -> np.ndarray:
    if args.bias:
        b = np.asarray(args.bias, dtype=float) * 1e-6
    else:
        b = cfg.biases()
        if b is None:
            raise ConfigError("give --bias or a bias_sweep in the config")
    if np.any(b >= cfg.junction().i0):
        raise ConfigError("bias at or above the critical current")
    return b


def _n_levels(p, i, grid) -> int:
    try:
        return solve_levels(p, i, grid).n_levels
    except NoBoundLevel:
        return 0


def _nan_pad(values, n):
    values = list(values)[:n]
    return values + [math.nan] * (n - len(values))


# --- commands --------------------------------------------------------------

def cmd_levels(args) -> int:
    cfg = _need_config(args)
    run = _Run(args, cfg)
    p, grid = cfg.junction(), cfg.grid()
    biases = _biases(args, cfg)

    def row(i):
        sol = solve_levels(p, i, grid)
        e = _nan_pad(sol.energies - sol.u_min, 3)
        f01 = transition_frequency(sol, 0, 1) / (2 * math.pi) if sol.n_levels > 1 else math.nan
        f12 = transition_frequency(sol, 1, 2) / (2 * math.pi) if sol.n_levels > 2 else math.nan
        try:
            slope = domega_di(p, i, grid)
        except (NoBoundLevel, ConvergenceError):
            slope = math.nan
        return [i, sol.n_levels, *e, f01, f12, level_count_ns(p, i), slope]

    rows = run.map(row, list(biases))
    header = ["i_A", "n_levels", "E0_J", "E1_J", "E2_J", "f01_Hz", "f12_Hz", "n_s", "domega01_di_rad_per_s_per_A"]
    cols = list(zip(*rows))
    run.csv("levels.csv", "levels", header, cols, {"energy_origin": "well_bottom"})
    run.figure("plot_levels", "levels.png", cols[0], cols[5], cols[6])
    return _report(run)


def cmd_rates(args) -> int:
    cfg = _need_config(args)
    run = _Run(args, cfg)
    p, env, grid = cfg.junction(), cfg.environment(), cfg.grid()
    biases = _biases(args, cfg)

    def row(i):
        sol = solve_levels(p, i, grid)
        rs = rate_set(p, env, i, sol)
        tun = _nan_pad(rs.tunnel, 3)
        pops = _nan_pad(rs.populations, 3)
        if sol.n_levels > 1:
            try:
                lw = linewidth(p, env, i, sol, grid=grid)
                widths = [lw.dissipative, lw.escape, lw.noise, lw.total, 1.0 / lw.total]
            except (NoBoundLevel, ConvergenceError):
                widths = [math.nan] * 5
        else:
            widths = [math.nan] * 5
        return [i, sol.n_levels, *tun, rs.up01, rs.down10, *pops, rs.total, *widths]

    rows = run.map(row, list(biases))
    header = ["i_A", "n_levels", "gamma0_per_s", "gamma1_per_s", "gamma2_per_s", "up01_per_s", "down10_per_s",
              "p0", "p1", "p2", "gamma_total_per_s", "width_dissipative_rad_per_s", "width_escape_rad_per_s",
              "width_noise_rad_per_s", "width_total_rad_per_s", "tau_s"]
    cols = list(zip(*rows))
    run.csv("rates.csv", "rates", header, cols)
    run.figure("plot_rates", "rates.png", cols[0], cols[10],
               {"dissipative": cols[11], "escape": cols[12], "noise": cols[13]}, cols[15])
    return _report(run)


def cmd_impedance(args) -> int:
    cfg = _need_config(args)
    run = _Run(args, cfg)
    net = cfg.network()
    f = cfg.frequencies()
    if f is None:
        f = np.linspace(0.0, 10e9, 1001)
    omega = 2 * math.pi * f
    z = np.atleast_1d(external_impedance(net, omega))
    r = np.atleast_1d(effective_parallel_resistance(net, omega))
    run.csv("impedance.csv", "impedance", ["f_Hz", "re_z_ohm", "im_z_ohm", "r_eff_ohm"], [f, z.real, z.imag, r])
    pos = f > 0
    run.figure("plot_impedance", "impedance.png", f[pos], r[pos])
    return _report(run)


def cmd_simulate(args) -> int:
    cfg = _need_config(args)
    run = _Run(args, cfg)
    ramp = cfg.ramp()
    if ramp is None:
        raise ConfigError("simulate needs a ramp section")
    p, env, grid = cfg.junction(), cfg.environment(), cfg.grid()
    drive = None if args.no_drive else cfg.drive()
    target = None if args.no_drive else cfg.drive_target()
    if target is not None:
        omega_d, goal = target
        b = np.linspace(ramp.i_start, ramp.i_max, 241)
        b = np.array([x for x in b if _n_levels(p, x, grid) >= 2])
        if len(b) == 0:
            raise NoBoundLevel("no bias on the ramp holds two levels")
        drive = calibrate_drive(p, env, omega_d, b, goal, grid, cfg.lineshape)
    events = simulate_escapes(p, env, ramp, drive, grid, threads=run.threads, lineshape=cfg.lineshape)
    if drive is not None:
        events.meta["drive_calibrated"] = target is not None
    run.written.extend(write_events(run.out, events, run.sha))
    if args.reference and drive is not None:
        ref = simulate_escapes(p, env, ramp, None, grid, threads=run.threads)
        run.written.extend(write_events(run.out, ref, run.sha, stem="events_reference"))
    return _report(run)


def _curve_from_events(path, override, fallback, t_w) -> tuple[EscapeRateCurve, dict]:
    """Rate curve from an event file; calibration is the override, else the sidecar, else ``fallback``."""
    ev = read_events(path)
    cal = override
    if cal is None:
        c = ev.meta.get("calibration")
        if c is not None:
            cal = CurrentCalibration(c["i_at_t0_A"], c["di_dt_A_per_s"], c.get("t0_s", 0.0))
        elif fallback is not None:
            cal = fallback
        else:
            raise ConfigError(f"{path} has no sidecar calibration; give a ramp in the config")
    h = build_histogram(ev, t_w)
    return to_current_axis(escape_rate_estimate(h), cal), {"n_trials": ev.n_trials, "n_escaped": ev.n_escaped}


def _curve_from_histogram(path, cal) -> tuple[EscapeRateCurve, dict]:
    meta, cols = read_csv(path)
    if "t_s" not in cols or "count" not in cols:
        raise ValueError(f"{path}: histogram needs t_s and count columns")
    h = histogram_from_counts(cols["t_s"], cols["count"], int(float(meta.get("n_survived", 0))))
    if cal is None:
        raise ConfigError("a pre-binned histogram needs a ramp in the config for calibration")
    return to_current_axis(escape_rate_estimate(h), cal), {"n_escaped": int(h.counts.sum())}


def _write_curve(run, name, curve: EscapeRateCurve):
    run.csv(name, "escape_rate_curve", ["i_A", "gamma_per_s", "sigma_per_s", "count", "at_risk"],
            [curve.x, curve.gamma, curve.sigma, curve.counts, curve.at_risk],
            {"bin_width_A": repr(float(curve.width)) if curve.width else "nan"})


def cmd_analyze(args) -> int:
    cfg = _need_config(args)
    run = _Run(args, cfg)
    ramp = cfg.ramp()
    cal = CurrentCalibration.from_ramp(ramp) if ramp is not None else None
    override = None
    if args.i_at_t0_uA is not None or args.di_dt_mA_per_s is not None:
        if args.i_at_t0_uA is None or args.di_dt_mA_per_s is None:
            raise ConfigError("give both --i-at-t0-uA and --di-dt-mA-per-s")
        override = CurrentCalibration(args.i_at_t0_uA * 1e-6, args.di_dt_mA_per_s * 1e-3)
    t_w = (args.t_w_ns or cfg.analysis["t_w_ns"]) * 1e-9
    min_counts = cfg.analysis["min_counts"]
    if bool(args.events) == bool(args.histogram):
        raise ConfigError("give exactly one of --events or --histogram")
    if args.events:
        curve, summary = _curve_from_events(args.events, override, cal, t_w)
    else:
        curve, summary = _curve_from_histogram(args.histogram, override or cal)
    curve = curve.select(curve.counts >= min_counts)
    _write_curve(run, "escape_rate.csv", curve)
    summary.update({"bins": len(curve), "t_w_s": t_w,
                    "gamma_range_per_s": [float(curve.gamma.min()), float(curve.gamma.max())] if len(curve) else None})
    run.figure("plot_escape_curve", "escape_rate.png", curve.x, curve.gamma, curve.sigma)

    status = EXIT_OK
    if args.reference:
        ref, _ = _curve_from_events(args.reference, override, cal, t_w)
        ref = ref.select(ref.counts >= min_counts)
        ev = read_events(args.events) if args.events else None
        omega_d = ((ev.meta.get("drive") if ev is not None else None) or {}).get("omega_d")
        if omega_d is None and cfg.drive() is not None:
            omega_d = cfg.drive().omega_d
        if omega_d is None and cfg.drive_target() is not None:
            omega_d = cfg.drive_target()[0]
        if omega_d is None:
            raise ConfigError("drive frequency unknown: not in the event sidecar or the config")
        scan = enhancement_scan(curve, ref, omega_d / (2 * math.pi))
        run.csv("scan.csv", "resonance_scan", ["i_A", "enhancement", "sigma"], [scan.i, scan.enhancement, scan.sigma],
                {"frequency_Hz": repr(scan.frequency)})
        summary["scan_points"] = len(scan.i)
        try:
            fit = fit_lorentzians(scan, cfg.analysis["n_peaks"])
        except (ConvergenceError, ValueError) as exc:
            summary["peak_fit_error"] = str(exc)
            status = EXIT_NUMERIC
            fit = None
        if fit is not None:
            summary["peaks"] = {
                "centers_A": fit.centers, "center_sigma_A": fit.center_errors,
                "fwhm_A": fit.fwhm, "fwhm_sigma_A": fit.fwhm_errors,
                "amplitudes": fit.amplitudes, "offset": fit.offset,
                "converged": fit.converged, "overlapping": fit.overlapping,
                "chi2": fit.result.chi2, "dof": fit.result.dof,
            }
            xi = np.linspace(scan.i.min(), scan.i.max(), 400)
            run.csv("scan_model.csv", "resonance_scan_model", ["i_A", "enhancement"], [xi, fit.model(xi)])
            run.figure("plot_scan", "scan.png", scan.i, scan.enhancement, scan.sigma,
                       model_i=xi, model=fit.model(xi), centers=fit.centers)
        else:
            run.figure("plot_scan", "scan.png", scan.i, scan.enhancement, scan.sigma)
    run.json("analysis.json", "analysis_summary", summary)
    _report(run)
    return status


def _columns(path, required, optional=()):
    meta, cols = read_csv(path)
    missing = [c for c in required if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return meta, [cols[c] for c in required], [cols.get(c) for c in optional]


def _multistart(fit_once: Callable, init, n: int, seed: int) -> FitResult:
    """Best of ``n`` fits from deterministic perturbations of ``init`` (the first is ``init`` itself)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    best, last_exc = None, None
    for k in range(max(1, n)):
        start = init if k == 0 else init.replace(
            i0=init.i0 * (1 + 0.002 * rng.standard_normal()),
            c=init.c * (1 + 0.1 * rng.standard_normal()),
            t=max(init.t * (1 + 0.2 * rng.standard_normal()), 0.0),
        )
        try:
            res = fit_once(start)
        except ConvergenceError as exc:
            last_exc = exc
            continue
        if best is None or res.chi2 < best.chi2:
            best = res
    if best is None:
        raise last_exc
    return best


def cmd_fit(args) -> int:
    cfg = _need_config(args)
    run = _Run(args, cfg)
    p, env, grid = cfg.junction(), cfg.environment(), cfg.grid()
    free = args.free.split(",") if args.free else None
    kind = args.kind
    if kind == "escape":
        meta, (i, g, s), _ = _columns(args.data, ("i_A", "gamma_per_s", "sigma_per_s"))
        width = float(meta.get("bin_width_A", "nan"))
        curve = EscapeRateCurve(i, g, s, axis="i", width=None if math.isnan(width) else width)
        fit_once = lambda init: fit_escape_curve(curve, init, free or ("i0", "c", "t"), env, grid)
        res = _multistart(fit_once, p, args.multistart, cfg.seed)
        p_fit = p.replace(**dict(zip(res.names, res.values.tolist())))
        model = escape_curve_model(p_fit, env, i, curve.width, grid)
        x, data, sig, ylabel, logy = i, g, s, r"$\Gamma$ (s$^{-1}$)", True
    elif kind == "spectrum":
        _, (i, f), (sf,) = _columns(args.data, ("i_A", "f_Hz"), ("sigma_f_Hz",))
        fit_once = lambda init: fit_spectrum(i, f, init, sf, free or ("i0", "c"), args.parameterization, grid)
        res = _multistart(fit_once, p, args.multistart, cfg.seed)
        vals = dict(zip(res.names, res.values.tolist()))
        c = res.extra.get("c", vals.get("c", p.c))
        p_fit = p.replace(i0=vals.get("i0", p.i0), c=c)
        model = spectrum_model(p_fit, i, grid) / (2 * math.pi)
        x, data, sig, ylabel, logy = i, f, sf, "frequency (Hz)", False
    else:
        _, (i, tau), (st,) = _columns(args.data, ("i_A", "tau_s"), ("sigma_tau_s",))
        fit_once = lambda init: fit_linewidth(i, tau, init, st, env.sigma_i, free or ("i0", "c"), grid)
        res = _multistart(fit_once, p, args.multistart, cfg.seed)
        comp = res.extra["components"]
        model = comp.tau
        x, data, sig, ylabel, logy = i, tau, st, r"$\tau$ (s)", True
    payload = {"kind": kind, **res.as_dict()}
    if kind == "linewidth":
        payload["crossover_i_A"] = comp.crossover()
    if "c" in res.extra:
        payload["implied_c_F"] = res.extra["c"]
    run.json(f"fit_{kind}.json", "fit_result", payload)
    cols = [x, data, model]
    header = ["i_A", "data", "model"]
    if kind == "linewidth":
        cols += [comp.escape, comp.noise]
        header += ["escape_rate_per_s", "noise_width_rad_per_s"]
    run.csv(f"fit_{kind}_model.csv", "fit_model_curve", header, cols)
    run.figure("plot_fit", f"fit_{kind}.png", x, data, model, xlabel=r"bias current ($\mu$A)",
               ylabel=ylabel, logy=logy, sigma=sig)
    return _report(run)


def cmd_design(args) -> int:
    cfg = load_config(args.config) if args.config else None
    doc = {"command": "design", "n_op": args.n_op, "n_g": args.n_g}
    run = _Run(args, cfg, doc)
    rep = min_levels(DesignInput(args.n_op, args.n_g))
    payload = {
        "n_op": rep.n_op, "n_g": rep.n_g, "fixed_point": rep.fixed_point, "ceiling": rep.ceiling,
        "fixed_point_with_prefactor": rep.fixed_point_exact, "iterations": rep.iterations,
        "residual": rep.residual, "period_count_reading": "N_p taken as n_g",
    }
    run.json("design.json", "design_report", payload)
    n_ops = 10.0 ** np.arange(0, 13)
    reps = [min_levels(DesignInput(n, args.n_g)) for n in n_ops]
    run.csv("design_sensitivity.csv", "design_sensitivity", ["n_op", "fixed_point", "ceiling", "fixed_point_with_prefactor"],
            [n_ops, [r.fixed_point for r in reps], [r.ceiling for r in reps], [r.fixed_point_exact for r in reps]],
            {"n_g": repr(float(args.n_g))})
    run.figure("plot_design", "design.png", n_ops, [r.fixed_point for r in reps])
    print(f"N_s* = {rep.fixed_point:.4f} (need {rep.ceiling} levels) for n_op = {args.n_op:g}, n_g = {args.n_g:g}")
    return _report(run)


def _report(run: _Run) -> int:
    for path in run.written:
        print(path)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and Monte Carlo")
    common.add_argument("--figures", action="store_true", help="also render PNG figures next to the tables")

    ap = argparse.ArgumentParser(prog="washboard", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("levels", parents=[common], help="metastable levels and transition frequencies")
    s.add_argument("--bias", type=float, action="append", help="bias in uA (repeatable; default: config sweep)")
    s.set_defaults(func=cmd_levels)

    s = sub.add_parser("rates", parents=[common], help="escape and thermal rates, linewidth, coherence time")
    s.add_argument("--bias", type=float, action="append", help="bias in uA (repeatable; default: config sweep)")
    s.set_defaults(func=cmd_rates)

    s = sub.add_parser("impedance", parents=[common], help="isolation-network impedance sweep")
    s.set_defaults(func=cmd_impedance)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo escape events for the configured ramp")
    s.add_argument("--no-drive", action="store_true", help="ignore the drive section")
    s.add_argument("--reference", action="store_true", help="also simulate an undriven reference run")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", parents=[common], help="escape-rate curve, enhancement scan and peak fit")
    s.add_argument("--events", help="event CSV from simulate")
    s.add_argument("--histogram", help="pre-binned histogram CSV with t_s,count columns")
    s.add_argument("--reference", help="undriven event CSV; enables the enhancement scan")
    s.add_argument("--t-w-ns", type=float, help="bin width in ns (default: config)")
    s.add_argument("--i-at-t0-uA", type=float, help="calibration offset (overrides the sidecar)")
    s.add_argument("--di-dt-mA-per-s", type=float, help="calibration slope (overrides the sidecar)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("fit", parents=[common], help="fit junction parameters to measured curves")
    s.add_argument("kind", choices=("escape", "spectrum", "linewidth"))
    s.add_argument("--data", required=True, help="input CSV")
    s.add_argument("--free", help="comma-separated free parameters, e.g. i0,c,t")
    s.add_argument("--parameterization", choices=("c", "omega_p0"), default="c")
    s.add_argument("--multistart", type=int, default=1, help="number of starts (default 1)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("design", parents=[common], help="minimum levels for a target number of gates")
    s.add_argument("--n-op", type=float, default=1e6)
    s.add_argument("--n-g", type=float, default=10.0)
    s.set_defaults(func=cmd_design)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must fit in an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        return args.func(args)
    except (ConvergenceError, NoBoundLevel, SingularBalance) as exc:
        print(f"washboard: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, BiasAboveCritical, ValueError, OSError, KeyError) as exc:
        print(f"washboard: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
