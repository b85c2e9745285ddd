"""Photon-count statistics -> readout fidelity, and the parameter sweeps.

Two classifiers are provided.  ``simple`` calls the spin up on one or more
clicks; ``threshold`` calls it up on more than M clicks with M the
likelihood-ratio threshold for Poisson counts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import lindblad
from ._accel import thread_map
from .params import DetectionChain, SystemParams, UNBOUNDED

CRITERIA = ("simple", "threshold")
SINGLE_SHOT = 0.82


class MislabeledStates(ValueError):
    """Spin-up counts below spin-down counts."""


class Unattainable(ValueError):
    """Target needs an efficiency above 1; ``eta`` holds the required value."""

    def __init__(self, eta: float, target: float):
        super().__init__(f"fidelity {target:g} needs efficiency {eta:.6g} > 1")
        self.eta = eta
        self.target = target


@dataclass(frozen=True)
class FidelityResult:
    fidelity: float
    p_up: float
    p_down: float
    window: float = math.nan
    threshold: int = 0


@dataclass(frozen=True)
class CountStatistics:
    t_grid: np.ndarray
    n_up: np.ndarray
    n_down: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        u = np.asarray(self.n_up, dtype=float)
        d = np.asarray(self.n_down, dtype=float)
        if not (t.shape == u.shape == d.shape) or t.ndim != 1:
            raise ValueError("t_grid, n_up and n_down must be 1-D arrays of equal length")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "n_up", u)
        object.__setattr__(self, "n_down", d)

    def violations(self, atol: float = 1e-12) -> list[str]:
        out = []
        for name in ("n_up", "n_down"):
            v = getattr(self, name)
            if np.any(v < -atol):
                out.append(f"{name} has negative entries")
            if np.any(np.diff(v) < -atol * np.maximum(1.0, np.abs(v[1:]))):
                out.append(f"{name} decreases with T")
        bad = np.nonzero(self.n_up < self.n_down - atol)[0]
        if bad.size:
            out.append(f"n_up < n_down at T = {self.t_grid[bad[0]]:g} ns ({bad.size} points)")
        if np.any(np.diff(self.t_grid) < 0):
            out.append("t_grid is not ascending")
        return out

    def scaled(self, factor: float) -> "CountStatistics":
        return CountStatistics(self.t_grid, self.n_up * factor, self.n_down * factor)


# --- classifiers --------------------------------------------------------------


def simple_fidelity(n_up: float, n_down: float) -> FidelityResult:
    if n_up < 0 or n_down < 0:
        raise ValueError("mean counts must be >= 0")
    p_up = -math.expm1(-n_up) if math.isfinite(n_up) else 1.0
    p_down = math.exp(-n_down)
    return FidelityResult(0.5 * (p_up + p_down), p_up, p_down, threshold=0)


def optimal_threshold(n_up: float, n_down: float) -> int:
    if n_down <= 0:
        return 0
    if n_up <= n_down:
        return 0
    if not math.isfinite(n_up):
        return UNBOUNDED
    return int(math.floor((n_up - n_down) / (math.log(n_up) - math.log(n_down))))


def threshold_fidelity(n_up: float, n_down: float) -> FidelityResult:
    """Optimal-threshold fidelity for Poisson counts; spin called up on > M clicks."""
    if n_up < 0 or n_down < 0:
        raise ValueError("mean counts must be >= 0")
    if n_up < n_down:
        raise MislabeledStates(f"n_up = {n_up:g} < n_down = {n_down:g}")
    if n_up == n_down:
        return FidelityResult(0.5, *_probs(0, n_up, n_down), threshold=0)
    M = optimal_threshold(n_up, n_down)
    if M == UNBOUNDED:
        return FidelityResult(1.0, 1.0, 1.0, threshold=M)
    p_up, p_down = _probs(M, n_up, n_down)
    return FidelityResult(0.5 * (p_up + p_down), p_up, p_down, threshold=M)


def _probs(M, n_up, n_down):
    return float(sps.poisson.sf(M, n_up)), float(sps.poisson.cdf(M, n_down))


def _curve(criterion: str, n_up: np.ndarray, n_down: np.ndarray):
    """Vectorised (F, P_up, P_down, M) for arrays of mean counts.

    Points where spin up is not brighter give the uninformative F = 0.5.
    """
    nu = np.asarray(n_up, dtype=float)
    nd = np.asarray(n_down, dtype=float)
    informative = nu > nd
    if criterion == "simple":
        M = np.zeros(nu.shape, dtype=np.int64)
    elif criterion == "threshold":
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = (nu - nd) / (np.log(nu) - np.log(nd))
        M = np.where(informative & (nd > 0), np.floor(np.nan_to_num(raw)), 0).astype(np.int64)
    else:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    p_up = sps.poisson.sf(M, nu)
    p_down = sps.poisson.cdf(M, nd)
    F = 0.5 * (p_up + p_down)
    F = np.where(informative, F, 0.5)
    return F, p_up, p_down, M


def optimize_window(stats: CountStatistics, criterion: str = "simple") -> FidelityResult:
    """Best common window on the grid; ties resolve to the shortest window."""
    if stats.t_grid.size == 0:
        raise ValueError("empty window grid")
    F, pu, pd, M = _curve(criterion, stats.n_up, stats.n_down)
    i = int(np.argmax(F))
    if F[i] == 0.5:
        # nothing informative: report the uninformative classifier
        return FidelityResult(0.5, 0.0, 1.0, float(stats.t_grid[i]), 0)
    return FidelityResult(float(F[i]), float(pu[i]), float(pd[i]), float(stats.t_grid[i]), int(M[i]))


# --- bare emitter bound ----------------------------------------------------------


def bare_dot_fidelity(eta: float, R_B: float) -> float:
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if R_B < 0 or R_B > 1:
        raise ValueError("R_B must lie in [0, 1]")
    if R_B == 0:
        return 1.0
    return 1.0 - 0.5 * math.exp(-eta * (1.0 - R_B) / R_B)


def required_efficiency(F_target: float, R_B: float) -> float:
    """Efficiency at which the bare-emitter bound reaches ``F_target``."""
    if not 0.5 < F_target < 1.0:
        raise ValueError("F_target must lie in (0.5, 1)")
    if not 0 < R_B < 1:
        raise ValueError("R_B must lie in (0, 1)")
    eta = -math.log(2.0 * (1.0 - F_target)) * R_B / (1.0 - R_B)
    if eta > 1.0 + 1e-12:
        raise Unattainable(eta, F_target)
    return min(eta, 1.0)


# --- model-based count curves ----------------------------------------------------


def default_window_grid(window_max: float = 400.0, step: float = 1.0) -> np.ndarray:
    n = int(round(window_max / step))
    return np.arange(n + 1) * step


def device_counts(
    p: SystemParams,
    d: DetectionChain,
    t_grid,
    power: float = 50.0,
    t1: float | None = None,
    basis_detuning: float | None = None,
    h: lindblad.HilbertConfig | None = None,
) -> CountStatistics:
    """N_up(T), N_down(T) from the master equation for the given chain."""
    t = np.asarray(t_grid, dtype=float)
    nu, _ = lindblad.count_curve(p, d, "up", t, power, h, t1, basis_detuning)
    nd, _ = lindblad.count_curve(p, d, "down", t, power, h, t1, basis_detuning)
    return CountStatistics(t, nu, nd)


def intrinsic_chain(d: DetectionChain) -> DetectionChain:
    """Unit output efficiency, no leakage, no dark counts, perfect preparation."""
    return d.replace(
        beta=1.0, eta_optics=1.0, eta_det=1.0, extinction_floor=0.0, dark_rate=0.0, init_fidelity=1.0
    )


def calibrate_extinction_floor(
    p: SystemParams,
    d: DetectionChain,
    target: float = 0.1,
    window: float = 75.0,
    power: float = 50.0,
    t1: float | None = None,
) -> float:
    """Leakage fraction that makes N_down(window) equal ``target``.

    N_down is affine in the floor, so this is a closed-form solve.
    """
    base = lindblad.accumulated_counts(p, d.replace(extinction_floor=0.0), "down", window, power, t1=t1)
    eps2 = lindblad.DriveSpec.from_power(power, p, d.beta_prime).epsilon ** 2
    slope = eps2 * d.eta_total * window
    if slope <= 0:
        raise ValueError("no leakage signal at zero drive or zero efficiency")
    floor = (target - base) / slope
    if not 0.0 <= floor <= 1.0:
        raise ValueError(f"target {target:g} needs extinction floor {floor:.4g} outside [0, 1]")
    return floor


# --- sweeps -------------------------------------------------------------------------


@dataclass
class SweepResult:
    """Columns keyed by name; ``variables`` lists the swept columns."""

    name: str
    variables: tuple[str, ...]
    columns: dict[str, np.ndarray]
    summary: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.columns[key]

    def to_csv(self, path) -> None:
        write_table(path, self.columns)


def write_table(path, columns: dict) -> None:
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _result_columns(results: list[FidelityResult]) -> dict[str, np.ndarray]:
    return {
        "F": np.array([r.fidelity for r in results]),
        "P_up": np.array([r.p_up for r in results]),
        "P_down": np.array([r.p_down for r in results]),
        "T_star": np.array([r.window for r in results]),
        "M": np.array([r.threshold for r in results], dtype=np.int64),
    }


def sweep_fidelity_vs_detuning(
    p: SystemParams,
    d: DetectionChain,
    deltas,
    power: float = 50.0,
    t1: float | None = None,
    t_grid=None,
    criterion: str = "simple",
) -> SweepResult:
    """Best-window fidelity versus cavity detuning from the spin-up transition.

    The probe follows the transition; the cavity sits ``delta`` (GHz) away
    and the analyzer uses the matching detuned basis.
    """
    t = default_window_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    deltas = np.asarray(deltas, dtype=float)

    def one(delta):
        q = p.replace(delta_c=p.delta_c + delta)
        return optimize_window(device_counts(q, d, t, power, t1), criterion)

    res = thread_map(one, deltas)
    cols = {"delta_ghz": deltas, **_result_columns(res)}
    i = int(np.argmax(cols["F"]))
    return SweepResult("detuning", ("delta_ghz",), cols, {"best_delta_ghz": float(deltas[i]), "best_F": float(cols["F"][i])})


def crossing(x, y, level: float) -> float:
    """First x at which y rises through ``level`` (linear interpolation)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    above = np.nonzero(y >= level)[0]
    if above.size == 0:
        return math.nan
    i = above[0]
    if i == 0:
        return float(x[0])
    x0, x1, y0, y1 = x[i - 1], x[i], y[i - 1], y[i]
    return float(x0 + (level - y0) * (x1 - x0) / (y1 - y0))


def sweep_fidelity_vs_efficiency(
    p: SystemParams,
    d: DetectionChain,
    etas,
    power: float = 50.0,
    t1: float | None = None,
    t_grid=None,
    criterion: str = "threshold",
) -> SweepResult:
    """Cavity readout versus the bare-emitter bound as the output efficiency varies.

    Counts come from the intrinsic device (see :func:`intrinsic_chain`) and
    are scaled linearly by the efficiency.
    """
    t = default_window_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    etas = np.asarray(etas, dtype=float)
    if np.any((etas < 0) | (etas > 1)):
        raise ValueError("efficiencies must lie in [0, 1]")
    unit = device_counts(p, intrinsic_chain(d), t, power, t1)
    res = [optimize_window(unit.scaled(e), criterion) for e in etas]
    R_B = _branching(p)
    cols = {"eta": etas, **_result_columns(res)}
    cols["F_bare"] = np.array([bare_dot_fidelity(e, R_B) for e in etas])
    summary = {"eta_single_shot": crossing(etas, cols["F"], SINGLE_SHOT), "R_B": R_B}
    return SweepResult("efficiency", ("eta",), cols, summary)


def _branching(p: SystemParams) -> float:
    tot = p.Gamma + p.gamma
    return p.gamma / tot if tot > 0 else 0.0


def gamma_for_branching(Gamma: float, R: float) -> float:
    if not 0 <= R < 1:
        raise ValueError("R must lie in [0, 1)")
    return Gamma * R / (1.0 - R)


def long_window_grid(p: SystemParams, d: DetectionChain, power: float, t1: float | None, n: int = 400):
    """Log-spaced windows reaching well past the slowest decay of the signal."""
    rate = lindblad.pumping_rate(p, power, d.beta_prime) if p.gamma > 0 else 0.0
    if t1 is not None and math.isfinite(t1):
        rate += 1.0 / t1
    t_max = 20.0 / rate if rate > 0 else 1e6
    return np.concatenate([[0.0], np.geomspace(0.1, t_max, n)])


def sweep_infidelity_vs_branching(
    p: SystemParams,
    d: DetectionChain,
    R_grid,
    eta: float | None = None,
    power: float = 50.0,
    t1: float | None = None,
    criterion: str = "threshold",
) -> SweepResult:
    """Infidelity 1 - F of cavity readout and of the bare bound versus R.

    gamma is re-derived from R with Gamma fixed; the window grid extends to
    20 signal lifetimes for every R.
    """
    R_grid = np.asarray(R_grid, dtype=float)
    eta = d.eta_total if eta is None else eta
    unit_chain = intrinsic_chain(d)

    def one(R):
        q = p.replace(gamma=gamma_for_branching(p.Gamma, R))
        t = long_window_grid(q, d, power, t1)
        return optimize_window(device_counts(q, unit_chain, t, power, t1).scaled(eta), criterion)

    res = thread_map(one, R_grid)
    cols = {"R_B": R_grid, **_result_columns(res)}
    cols["D"] = 1.0 - cols["F"]
    cols["D_bare"] = np.array([1.0 - bare_dot_fidelity(eta, R) for R in R_grid])
    return SweepResult("branching", ("R_B",), cols, {"eta": eta})


def sweep_power_window(
    p: SystemParams,
    d: DetectionChain,
    powers,
    t_grid=None,
    t1: float | None = None,
    criterion: str = "simple",
) -> SweepResult:
    """Fidelity map over probe power (nW) and window (ns), long format."""
    t = default_window_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    powers = np.asarray(powers, dtype=float)
    if powers.size == 0 or t.size == 0:
        raise ValueError("power and window grids must be nonempty")

    def one(pw):
        if pw <= 0:
            return np.full(t.size, 0.5), CountStatistics(t, np.zeros_like(t), np.zeros_like(t))
        s = device_counts(p, d, t, pw, t1)
        return _curve(criterion, s.n_up, s.n_down)[0], s

    maps = thread_map(one, powers)
    F = np.array([m[0] for m in maps])
    best = [optimize_window(m[1], criterion) if pw > 0 else FidelityResult(0.5, 0.0, 1.0, float(t[0]), 0)
            for pw, m in zip(powers, maps)]
    i, j = np.unravel_index(int(np.argmax(F)), F.shape)
    cols = {
        "power_nw": np.repeat(powers, t.size),
        "window_ns": np.tile(t, powers.size),
        "F": F.reshape(-1),
    }
    summary = {
        "best_power_nw": float(powers[i]),
        "best_window_ns": float(t[j]),
        "best_F": float(F[i, j]),
        "optimal_window_per_power": [r.window for r in best],
        "optimal_F_per_power": [r.fidelity for r in best],
    }
    out = SweepResult("power-window", ("power_nw", "window_ns"), cols, summary)
    out.grid = F
    return out
