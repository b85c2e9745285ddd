"""``readout`` command-line entry point.

Each invocation writes one directory holding ``manifest.json``, data CSVs and
``summary.json``.  Exit codes: 0 ok, 2 config/input error, 3 numerical
failure, 4 fit did not converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analytic, fitting, lindblad, montecarlo, stats
from .params import ConfigError, derive_quantities, load_config, validate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_FIT = 0, 2, 3, 4

SWEEPS = ("detuning", "efficiency", "branching", "power-window")
FITS = ("exp-decay", "pumping", "recovery")

DEFAULT_GRIDS = {
    "spectrum": "-100:100:201",
    "detuning": "-15:15:7",
    "efficiency": "log:1e-4:1:81",
    "branching": "log:1e-3:0.5:19",
    "power-window": "log:1:1000:13",
}


class InputError(Exception):
    pass


def parse_grid(text: str) -> np.ndarray:
    """``a:b:n`` (linear), ``log:a:b:n`` (geometric) or ``x1,x2,...``."""
    try:
        if text.startswith("log:"):
            a, b, n = text[4:].split(":")
            return np.geomspace(float(a), float(b), int(n))
        if ":" in text:
            a, b, n = text.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise InputError(f"cannot parse grid {text!r}") from None


def _f(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {k: _f(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_f(x) for x in v]
    return v


def dump_json(path: Path, obj) -> None:
    # repr of a Python float round-trips, which fixes the text for fixed input
    path.write_text(json.dumps(_f(obj), indent=2, sort_keys=True) + "\n")


class Run:
    def __init__(self, command: str, args):
        self.command = command
        self.out = Path(args.out or f"readout-{command}")
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = getattr(args, "seed", None)
        self.config_path = getattr(args, "config", None)
        self.files: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def finish(self, summary: dict) -> None:
        dump_json(self.path("summary.json"), summary)
        cfg_hash = None
        if self.config_path:
            cfg_hash = hashlib.sha256(Path(self.config_path).read_bytes()).hexdigest()
        self.files.append("manifest.json")
        manifest = {
            "command": self.command,
            "config": str(self.config_path) if self.config_path else None,
            "config_sha256": cfg_hash,
            "seed": self.seed,
            "outputs": sorted(self.files),
            "wall_time_s": time.perf_counter() - self.t0,
            "version": __version__,
        }
        dump_json(self.out / "manifest.json", manifest)


def _load(args):
    p, d, opts = load_config(args.config)
    bad = validate(p, d)
    if bad:
        raise ConfigError(f"{args.config}: " + "; ".join(str(v) for v in bad))
    return p, d, opts


def _t1(opts):
    return opts.t1_ns if opts.t1_ns and math.isfinite(opts.t1_ns) and opts.t1_ns > 0 else None


# --- commands -----------------------------------------------------------------------


def cmd_spectrum(args) -> int:
    p, d, opts = _load(args)
    grid = parse_grid(args.grid or DEFAULT_GRIDS["spectrum"])
    h = lindblad.HilbertConfig(opts.n_max)
    run = Run("spectrum", args)
    coupled = lindblad.reflection_spectrum(p, grid, basis_detuning=p.delta_c, chain=d, h=h)
    bare = lindblad.reflection_spectrum(p.replace(g=0.0), grid, basis_detuning=p.delta_c, chain=d, h=h)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bare > 0, coupled / bare, np.inf)
    stats.write_table(run.path("spectrum.csv"), {"delta_ghz": grid, "bare": bare, "coupled": coupled, "ratio": ratio})
    i0 = int(np.argmin(np.abs(grid)))
    summary = {
        "delta_at_reference_ghz": grid[i0],
        "ratio_at_resonance": ratio[i0],
        "coupled_local_max_delta_ghz": _nearest_extremum(grid, coupled, +1),
        "bare_local_min_delta_ghz": _nearest_extremum(grid, bare, -1),
        "extinction_floor": d.extinction_floor,
    }
    run.finish(summary)
    return EXIT_OK


def _nearest_extremum(x, y, sign):
    """Grid point of the local max (sign=+1) or min (-1) closest to x = 0."""
    z = sign * np.asarray(y)
    idx = [i for i in range(1, len(z) - 1) if z[i] >= z[i - 1] and z[i] >= z[i + 1]]
    if not idx:
        return None
    return x[min(idx, key=lambda i: abs(x[i]))]


def cmd_fidelity(args) -> int:
    p, d, opts = _load(args)
    sweep = args.sweep
    grid = parse_grid(args.grid or DEFAULT_GRIDS[sweep])
    t1 = _t1(opts)
    power = opts.probe_power_nw
    windows = stats.default_window_grid(opts.window_max_ns, opts.window_step_ns)
    if args.windows:
        windows = parse_grid(args.windows)
    run = Run("fidelity", args)
    if sweep == "detuning":
        res = stats.sweep_fidelity_vs_detuning(p, d, grid, power, t1, windows)
        summary = dict(res.summary, measured_peak_F=0.61)
    elif sweep == "efficiency":
        res = stats.sweep_fidelity_vs_efficiency(p, d, grid, power, t1, windows)
        summary = dict(res.summary, reference_eta_single_shot=0.017, configured_eta=d.eta_total)
        summary["F_at_configured_eta"] = float(np.interp(d.eta_total, grid, res["F"]))
    elif sweep == "branching":
        res = stats.sweep_infidelity_vs_branching(p, d, grid, power=power, t1=t1)
        summary = dict(res.summary)
    else:
        res = stats.sweep_power_window(p, d, grid, windows, t1)
        summary = dict(res.summary)
    summary["sweep"] = sweep
    res.to_csv(run.path(f"{sweep}.csv"))
    run.finish(summary)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    p, d, opts = _load(args)
    if args.runs < 1:
        raise InputError("--runs must be >= 1")
    seed = opts.seed if args.seed is None else args.seed
    args.seed = seed
    cfg = montecarlo.TrajectoryConfig.from_model(
        p, d, opts.probe_power_nw, _t1(opts) or math.inf, lindblad.HilbertConfig(opts.n_max),
        seed=seed, afterpulse_delay=opts.afterpulse_delay_ns, probe_duration=opts.window_max_ns,
    )
    if args.decay_ns is not None:
        cfg = cfg.replace(gamma_p_up=1.0 / args.decay_ns)
    run = Run("montecarlo", args)
    est = montecarlo.estimate_readout_probabilities(cfg, d, args.runs, args.window, args.threshold)
    # time-resolved spin-up signal (per-run clicks per bin), directly fittable
    up = montecarlo.simulate_batch(cfg.replace(pump_target="up"), d, args.runs, 0)
    edges = np.arange(0.0, cfg.probe_duration + args.bin_ns / 2, args.bin_ns)
    rel = up.click_t - cfg.probe_start
    hist, _ = np.histogram(rel[rel >= 0], bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    rate = hist / (args.runs * args.bin_ns)
    stats.write_table(run.path("trace_up.csv"), {"t_ns": centers, "clicks_per_ns": rate})
    if args.clicks:
        montecarlo.write_clicks_csv(run.path("clicks.csv"), up)
    F_pois = stats.threshold_fidelity(est.mean_up, est.mean_down) if est.mean_up >= est.mean_down else None
    # exact prediction of the same model (preparation errors and flips included)
    F_exact = None
    if d.dead_time == 0 and d.afterpulse_prob == 0:
        F_exact = montecarlo.exact_readout(cfg, d, args.window, args.threshold)[2]
    summary = {
        "P_up": est.p_up,
        "P_down": est.p_down,
        "F": est.fidelity,
        "stderr": {"P_up": est.se_up, "P_down": est.se_down, "F": est.se_fidelity},
        "n_runs": est.n_runs,
        "seed": seed,
        "window_ns": est.window,
        "threshold": est.threshold,
        "mean_counts": {"up": est.mean_up, "down": est.mean_down},
        "poisson_F_from_means": F_pois.fidelity if F_pois else None,
        "exact_F": F_exact,
        "rates_per_ns": {
            "flux_up": cfg.flux_up, "flux_down": cfg.flux_down, "background": cfg.background,
            "gamma_p_up": cfg.gamma_p_up, "relaxation_each_way": cfg.relaxation,
        },
    }
    run.finish(summary)
    return EXIT_OK


def cmd_fit(args) -> int:
    x, y, sigma = fitting.read_trace_csv(args.input)
    run = Run("fit", args)
    if args.kind == "exp-decay":
        res = fitting.fit_exponential_decay(x, y, sigma)
    elif args.kind == "recovery":
        res = fitting.fit_saturation_recovery(x, y, sigma)
    else:
        if not args.config:
            raise InputError("pumping fit needs --config for the fixed parameters")
        p, d, opts = _load(args)
        res = fitting.fit_pumping_curve(x, y, p, sigma, model=fitting.PumpingModel(p, lindblad.HilbertConfig(opts.n_max)))
    run.finish({"kind": args.kind, "input": str(args.input), **res.to_dict()})
    if not res.converged:
        print(f"fit did not converge: {res.message}; flags: {', '.join(res.flags) or 'none'}", file=sys.stderr)
        return EXIT_FIT
    if res.flags:
        print(f"warning: fit flags: {', '.join(res.flags)}", file=sys.stderr)
    return EXIT_OK


def cmd_derive(args) -> int:
    p, d, opts = _load(args)
    run = Run("derive", args)
    dq = derive_quantities(p)
    summary = {
        "C": dq.C, "Gamma_d": dq.Gamma_d, "kappa_ex": dq.kappa_ex, "R_B": dq.R_B, "tau_mod_ns": dq.tau_mod,
        "N_budget": dq.N_budget, "N_prime": dq.N_prime, "enhancement": analytic.enhancement_factor(p),
        "r_up": analytic.resonant_reflection("up", dq, p.alpha), "r_down": analytic.resonant_reflection("down", dq, p.alpha),
        "eta_total": d.eta_total,
    }
    run.finish(summary)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="readout", description="Cavity-enhanced spin readout simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="key = value configuration file")
        sp.add_argument("--out", help="output directory (default readout-<command>)")
        sp.add_argument("--seed", type=int, default=None, help="random seed")
        sp.add_argument("--grid", help="a:b:n, log:a:b:n or comma list (write --grid=-a:b:n for negative starts)")

    sp = sub.add_parser("spectrum", help="bare and coupled reflection spectra")
    common(sp)
    sp.set_defaults(fn=cmd_spectrum)

    sp = sub.add_parser("fidelity", help="readout fidelity sweeps")
    common(sp)
    sp.add_argument("--sweep", choices=SWEEPS, required=True)
    sp.add_argument("--windows", help="window grid in ns (defaults from config)")
    sp.set_defaults(fn=cmd_fidelity)

    sp = sub.add_parser("montecarlo", help="counting Monte Carlo of the readout")
    common(sp)
    sp.add_argument("--runs", type=int, default=100000)
    sp.add_argument("--window", type=float, default=75.0, help="readout window (ns)")
    sp.add_argument("--threshold", type=int, default=0, help="call up on more than this many clicks")
    sp.add_argument("--bin-ns", type=float, default=2.0, help="bin width of the signal trace")
    sp.add_argument("--decay-ns", type=float, default=None, help="override 1/gamma_p (ns)")
    sp.add_argument("--clicks", action="store_true", help="also write per-run click times")
    sp.set_defaults(fn=cmd_montecarlo)

    sp = sub.add_parser("fit", help="least-squares fits of traces")
    common(sp, config_required=False)
    sp.add_argument("kind", choices=FITS)
    sp.add_argument("--input", required=True, help="CSV with x, y[, sigma] columns")
    sp.set_defaults(fn=cmd_fit)

    sp = sub.add_parser("derive", help="derived quantities of a configuration")
    common(sp)
    sp.set_defaults(fn=cmd_derive)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InputError, fitting.FitInputError, FileNotFoundError, stats.MislabeledStates) as exc:
        print(f"readout: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (lindblad.EvolutionError, lindblad.ConvergenceError, lindblad.DegenerateSteadyState,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"readout: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"readout: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
