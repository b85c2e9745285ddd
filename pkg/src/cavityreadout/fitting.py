"""Least-squares extraction of decay constants, pumping parameters and T1."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants
from scipy.optimize import least_squares

from . import lindblad
from .params import SystemParams

MAX_ITER = 200
GTOL = 1e-10


class FitInputError(ValueError):
    """Data unusable for the requested fit."""


@dataclass(frozen=True)
class FitResult:
    params: dict
    stderr: dict
    rss: float
    converged: bool
    iterations: int
    flags: tuple = ()
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def authoritative(self) -> bool:
        return self.converged and not self.flags

    def __getitem__(self, key):
        return self.params[key]

    def interval(self, key, k: float = 1.0):
        v, s = self.params[key], self.stderr[key]
        return v - k * s, v + k * s

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "stderr": dict(self.stderr),
            "rss": self.rss,
            "converged": self.converged,
            "authoritative": self.authoritative,
            "iterations": self.iterations,
            "flags": list(self.flags),
            "message": self.message,
            **({"extra": self.extra} if self.extra else {}),
        }


def _check_xy(t, y, min_points=4, sigma=None):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.ndim != 1 or t.shape != y.shape:
        raise FitInputError("x and y must be 1-D arrays of equal length")
    if t.size < min_points:
        raise FitInputError(f"need at least {min_points} points, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise FitInputError("non-finite values in data")
    if np.any(np.diff(t) <= 0):
        raise FitInputError("x must be strictly ascending")
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != y.shape or np.any(sigma <= 0):
            raise FitInputError("sigma must be positive and match y")
    return t, y, sigma


def _solve(residual, x0, names, to_params, n_data, jac_transform):
    """Run the optimizer and convert log-parameter covariance to parameters."""
    res = least_squares(
        residual, x0, method="trf", xtol=1e-15, ftol=1e-15, gtol=GTOL, max_nfev=MAX_ITER * (len(x0) + 1)
    )
    r = res.fun
    rss = float(r @ r)
    J = res.jac
    dof = max(n_data - len(x0), 1)
    s2 = rss / dof
    flags = []
    try:
        cov = np.linalg.inv(J.T @ J) * s2
        if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
            raise np.linalg.LinAlgError
        cond = np.linalg.cond(J.T @ J)
        if cond > 1e14:
            flags.append("ill-conditioned")
    except np.linalg.LinAlgError:
        cov = np.full((len(x0), len(x0)), np.inf)
        flags.append("singular-jacobian")
    values = to_params(res.x)
    scale = jac_transform(res.x)
    stderr = {k: float(abs(scale[i]) * math.sqrt(cov[i, i])) for i, k in enumerate(names)}
    grad = float(np.max(np.abs(J.T @ r))) if r.size else 0.0
    converged = bool(res.success) and res.status > 0
    return FitResult(
        params={k: float(v) for k, v in zip(names, values)},
        stderr=stderr,
        rss=rss,
        converged=converged,
        iterations=int(res.nfev),
        flags=tuple(flags),
        message=f"{res.message} (max |J^T r| = {grad:.3g})",
    )


def _flat(y, rel=1e-12):
    scale = max(np.max(np.abs(y)), 1e-300)
    return np.ptp(y) <= rel * scale


def _unidentifiable(names, values, reason, n_iter=0) -> FitResult:
    return FitResult(
        params=dict(zip(names, values)),
        stderr={k: math.inf for k in names},
        rss=0.0,
        converged=False,
        iterations=n_iter,
        flags=("unidentifiable",),
        message=reason,
    )


# --- exponential decay ----------------------------------------------------------


def _e_crossing(t, y, start, end):
    """First t where y moves 1 - 1/e of the way from ``start`` to ``end``."""
    level = end + (start - end) / math.e
    if start >= end:
        idx = np.nonzero(y <= level)[0]
    else:
        idx = np.nonzero(y >= level)[0]
    if idx.size == 0 or idx[0] == 0:
        return (t[-1] - t[0]) / 3.0
    return max(t[idx[0]] - t[0], (t[1] - t[0]) * 0.5)


def fit_exponential_decay(t, y, sigma=None) -> FitResult:
    """A exp(-t/tau) + B; tau > 0 via a log parameter."""
    t, y, sigma = _check_xy(t, y, 4, sigma)
    names = ("A", "tau", "B")
    if _flat(y):
        return _unidentifiable(names, (0.0, math.nan, float(y.mean())), "flat data: tau unidentifiable")
    t0 = t[0]
    tail = y[-max(2, y.size // 5):].mean()
    A0 = y[0] - tail
    tau0 = _e_crossing(t, y, y[0], tail)
    w = 1.0 / sigma if sigma is not None else np.ones_like(y)
    # A is referenced to the first sample so that a time shift only moves A
    def resid(x):
        a, lt, b = x
        return w * (a * np.exp(-(t - t0) / math.exp(lt)) + b - y)

    fit = _solve(
        resid, np.array([A0, math.log(tau0), tail]), names,
        lambda x: (x[0], math.exp(x[1]), x[2]), y.size,
        lambda x: (1.0, math.exp(x[1]), 1.0),
    )
    A_ref = fit.params["A"]
    tau = fit.params["tau"]
    shift = math.exp(t0 / tau) if abs(t0 / tau) < 700 else math.inf
    params = {"A": A_ref * shift, "tau": tau, "B": fit.params["B"]}
    stderr = dict(fit.stderr, A=fit.stderr["A"] * shift)
    flags = list(fit.flags)
    if fit.stderr["tau"] > 10 * tau or abs(A_ref) <= 1e-12 * max(np.abs(y).max(), 1e-300):
        flags.append("unidentifiable")
    return FitResult(params, stderr, fit.rss, fit.converged, fit.iterations, tuple(flags), fit.message,
                     {"A_at_first_sample": A_ref, "t_ref": t0})


def decay_model(t, A, tau, B):
    return A * np.exp(-np.asarray(t, dtype=float) / tau) + B


# --- saturation recovery ------------------------------------------------------------


def recovery_model(t, T1, A, B):
    return A * (1.0 - np.exp(-np.asarray(t, dtype=float) / T1)) + B


def fit_saturation_recovery(delays, intensities, sigma=None) -> FitResult:
    """A (1 - exp(-t/T1)) + B for a pump-probe relaxation curve."""
    t, y, sigma = _check_xy(delays, intensities, 4, sigma)
    names = ("T1", "A", "B")
    if _flat(y):
        return _unidentifiable(names, (math.nan, 0.0, float(y.mean())), "flat data: T1 unidentifiable")
    if np.all(np.diff(y) <= 0):
        raise FitInputError("intensity decreases monotonically with delay: not a recovery curve")
    head = y[: max(2, y.size // 5)].mean()
    tail = y[-max(2, y.size // 5):].mean()
    B0 = y[0]
    A0 = max(tail - head, 1e-12 * max(abs(tail), 1.0))
    T0 = _e_crossing(t, y, tail, head) + t[0] if tail > head else (t[-1] - t[0]) / 3.0
    T0 = max(T0, (t[-1] - t[0]) / (10 * t.size))
    w = 1.0 / sigma if sigma is not None else np.ones_like(y)

    def resid(x):
        lT, a, b = x
        return w * (recovery_model(t, math.exp(lT), a, b) - y)

    fit = _solve(
        resid, np.array([math.log(T0), A0, B0]), names,
        lambda x: (math.exp(x[0]), x[1], x[2]), y.size,
        lambda x: (math.exp(x[0]), 1.0, 1.0),
    )
    flags = list(fit.flags)
    if fit.params["A"] < 0:
        flags.append("negative-amplitude")
    return FitResult(fit.params, fit.stderr, fit.rss, fit.converged, fit.iterations, tuple(flags), fit.message)


# --- optical pumping curve -------------------------------------------------------------


class PumpingModel:
    """Memoised forward model gamma_p(gamma, beta' * P).

    The drive enters only through epsilon^2 = beta' P / (h nu), so results
    are keyed on (gamma, beta' P) and shared between parameter points.
    """

    def __init__(self, fixed: SystemParams, h: lindblad.HilbertConfig | None = None):
        self.fixed = fixed
        self.h = h or lindblad.HilbertConfig(3)
        self._cache: dict[tuple[float, float], float] = {}
        self.calls = 0

    def __call__(self, gamma: float, beta_prime: float, power: float) -> float:
        key = (float(gamma), float(beta_prime * power))
        r = self._cache.get(key)
        if r is None:
            self.calls += 1
            q = self.fixed.replace(gamma=gamma)
            r = lindblad.pumping_rate(q, key[1], 1.0, self.h)
            self._cache[key] = r
        return r

    def curve(self, gamma, beta_prime, powers):
        return np.array([self(gamma, beta_prime, P) for P in powers])


def fit_pumping_curve(
    powers,
    rates,
    fixed: SystemParams,
    sigma=None,
    gamma0: float | None = None,
    beta_prime0: float = 0.03,
    model: PumpingModel | None = None,
) -> FitResult:
    """Fit (gamma, beta') of the master-equation pumping rate to gamma_p(P).

    ``rates`` are in 1/ns, ``powers`` in nW; residuals are relative unless
    ``sigma`` is given.  Parameters are positive via logs.
    """
    P = np.asarray(powers, dtype=float)
    y = np.asarray(rates, dtype=float)
    names = ("gamma", "beta_prime")
    if P.ndim != 1 or P.shape != y.shape:
        raise FitInputError("powers and rates must be 1-D arrays of equal length")
    if P.size < 5:
        raise FitInputError(f"need at least 5 points, got {P.size}")
    if np.any(P <= 0) or not np.all(np.isfinite(y)):
        raise FitInputError("powers must be > 0 and rates finite")
    if np.unique(P).size < 2 or P.max() / P.min() < 10:
        return _unidentifiable(names, (math.nan, math.nan), "power grid spans less than a decade")
    if np.all(y <= 0):
        return _unidentifiable(names, (math.nan, math.nan), "all rates are zero")
    order = np.argsort(P)
    P, y = P[order], y[order]
    model = model or PumpingModel(fixed)
    if gamma0 is None:
        # the saturated rate approaches gamma / 2 scale; use the top of the curve
        gamma0 = max(4.0 * y.max() / (2 * math.pi), 1e-4)
    w = 1.0 / (np.asarray(sigma, dtype=float)[order] if sigma is not None else np.maximum(np.abs(y), 1e-300))

    def resid(x):
        g, b = math.exp(x[0]), math.exp(x[1])
        return w * (model.curve(g, b, P) - y)

    fit = _solve(
        resid, np.log([gamma0, beta_prime0]), names,
        lambda x: np.exp(x), y.size, lambda x: np.exp(x),
    )
    gamma = fit.params["gamma"]
    R_B = gamma / (fixed.Gamma + gamma) if fixed.Gamma + gamma > 0 else math.nan
    return FitResult(fit.params, fit.stderr, fit.rss, fit.converged, fit.iterations, fit.flags,
                     fit.message, {"R_B": R_B, "model_calls": model.calls})


# --- Zeeman splitting ------------------------------------------------------------------


def lande_g_factor(delta_e: float, B: float) -> float:
    """g = h * delta_e / (mu_B * B) with delta_e a linear frequency in GHz."""
    if B == 0:
        raise ValueError("B must be nonzero")
    return constants.h * delta_e * 1e9 / (constants.physical_constants["Bohr magneton"][0] * B)


# --- input traces --------------------------------------------------------------------


def read_trace_csv(path):
    """Two- or three-column CSV (x, y[, sigma_y]); an optional header row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not any(cells) or cells[0].startswith("#"):
                continue
            try:
                vals = [float(c) for c in cells if c != ""]
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header
                raise FitInputError(f"{path}: line {lineno}: non-numeric value in {row!r}") from None
            if len(vals) not in (2, 3):
                raise FitInputError(f"{path}: line {lineno}: expected 2 or 3 columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise FitInputError(f"{path}: no data rows")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise FitInputError(f"{path}: inconsistent column count")
    a = np.array(rows)
    sigma = a[:, 2] if a.shape[1] == 3 else None
    return a[:, 0], a[:, 1], sigma
