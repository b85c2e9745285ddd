"""Physical parameters of the cavity / emitter system and the detection chain.

All rates are stored as linear frequencies in GHz (the value of rate/2pi).
Dynamical code converts to angular units (rad/ns) with :func:`angular`.
"""

from __future__ import annotations

import math
import dataclasses
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from scipy import constants

TWO_PI = 2.0 * math.pi

#: Marker for quantities that diverge (e.g. photon budgets when gamma = 0).
UNBOUNDED = math.inf


def angular(f_ghz: float) -> float:
    """GHz (linear) -> rad/ns."""
    return TWO_PI * f_ghz


def photon_energy(wavelength_nm: float) -> float:
    """Photon energy in joules."""
    return constants.h * constants.c / (wavelength_nm * 1e-9)


def photon_flux(power_nw: float, wavelength_nm: float) -> float:
    """Optical power (nW) -> photons per ns."""
    return power_nw * 1e-9 / photon_energy(wavelength_nm) * 1e-9


@dataclass(frozen=True)
class SystemParams:
    g: float
    kappa: float
    alpha: float
    Gamma: float
    gamma: float
    gamma_d: float
    delta_c: float = 0.0
    delta_x: float = 0.0
    wavelength: float = 928.0

    @property
    def kappa_ex(self) -> float:
        return self.alpha * self.kappa

    @property
    def Gamma_d(self) -> float:
        return 0.5 * (self.Gamma + self.gamma) + self.gamma_d

    def replace(self, **changes) -> "SystemParams":
        return _replace(self, changes)


@dataclass(frozen=True)
class DerivedParams:
    Gamma_d: float
    kappa_ex: float
    C: float
    R_B: float
    tau_mod: float
    N_budget: float
    N_prime: float


@dataclass(frozen=True)
class DetectionChain:
    beta: float = 0.045
    beta_prime: float = 0.045
    eta_optics: float = 0.9 * 0.73 * 0.4
    eta_det: float = 0.35
    dead_time: float = 0.0
    dark_rate: float = 0.0
    afterpulse_prob: float = 0.0
    extinction_floor: float = 0.0
    init_fidelity: float = 1.0

    @property
    def eta_total(self) -> float:
        """Output-side detection efficiency (cavity mode -> detector click)."""
        return self.beta * self.eta_optics * self.eta_det

    @property
    def dark_rate_per_ns(self) -> float:
        return self.dark_rate * 1e-9

    def replace(self, **changes) -> "DetectionChain":
        return _replace(self, changes)


def _replace(obj, changes):
    return dataclasses.replace(obj, **changes)


def derive_quantities(p: SystemParams) -> DerivedParams:
    Gamma_d = p.Gamma_d
    g2 = p.g * p.g
    C = 2.0 * g2 / (p.kappa * Gamma_d) if g2 > 0 else 0.0
    total = p.Gamma + p.gamma
    R_B = p.gamma / total if total > 0 else 0.0
    tau_mod = 1.0 / (TWO_PI * 4.0 * g2 / p.kappa) if g2 > 0 else UNBOUNDED
    if p.gamma > 0:
        N_budget = 2.0 * g2 / (p.kappa * p.gamma)
        N_prime = p.Gamma / p.gamma
    else:
        N_budget = 0.0 if g2 == 0 else UNBOUNDED
        N_prime = UNBOUNDED
    return DerivedParams(
        Gamma_d=Gamma_d,
        kappa_ex=p.kappa_ex,
        C=C,
        R_B=R_B,
        tau_mod=tau_mod,
        N_budget=N_budget,
        N_prime=N_prime,
    )


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def validate(
    p: SystemParams, d: DetectionChain | None = None, cavity_ops: bool = True
) -> list[Violation]:
    """Return every violated invariant; an empty list means valid."""
    out: list[Violation] = []

    def check(name, ok, msg):
        if not ok:
            out.append(Violation(name, msg))

    for name in ("g", "kappa", "Gamma", "gamma", "gamma_d"):
        v = getattr(p, name)
        check(name, math.isfinite(v) and v >= 0, f"must be >= 0, got {v!r}")
    check("alpha", 0.0 <= p.alpha <= 1.0, f"must lie in [0, 1], got {p.alpha!r}")
    check("wavelength", p.wavelength > 0, f"must be > 0, got {p.wavelength!r}")
    for name in ("delta_c", "delta_x"):
        check(name, math.isfinite(getattr(p, name)), "must be finite")
    if cavity_ops:
        check("kappa", p.kappa > 0, "must be > 0 for cavity operations")
    if d is not None:
        for f in fields(d):
            v = getattr(d, f.name)
            if f.name in ("dead_time", "dark_rate"):
                check(f.name, math.isfinite(v) and v >= 0, f"must be >= 0, got {v!r}")
            else:
                check(f.name, 0.0 <= v <= 1.0, f"must lie in [0, 1], got {v!r}")
    return out


# --- configuration files -----------------------------------------------------

# config key -> (target, attribute)
PARAM_KEYS = {
    "g_ghz": ("system", "g"),
    "kappa_ghz": ("system", "kappa"),
    "alpha": ("system", "alpha"),
    "gamma_rad_ghz": ("system", "Gamma"),
    "gamma_cross_ghz": ("system", "gamma"),
    "gamma_dephasing_ghz": ("system", "gamma_d"),
    "delta_c_ghz": ("system", "delta_c"),
    "delta_x_ghz": ("system", "delta_x"),
    "wavelength_nm": ("system", "wavelength"),
    "beta": ("chain", "beta"),
    "beta_prime": ("chain", "beta_prime"),
    "eta_optics": ("chain", "eta_optics"),
    "eta_det": ("chain", "eta_det"),
    "dead_time_ns": ("chain", "dead_time"),
    "dark_rate_hz": ("chain", "dark_rate"),
    "afterpulse_prob": ("chain", "afterpulse_prob"),
    "extinction_floor": ("chain", "extinction_floor"),
    "init_fidelity": ("chain", "init_fidelity"),
}


@dataclass(frozen=True)
class RunOptions:
    """Optional keys; every one has a documented default."""

    probe_power_nw: float = 50.0
    t1_ns: float = 2210.0
    afterpulse_delay_ns: float = 100.0
    n_max: int = 3
    window_max_ns: float = 400.0
    window_step_ns: float = 1.0
    seed: int = 0


OPTION_KEYS = {f.name: f.type for f in fields(RunOptions)}


class ConfigError(ValueError):
    """Raised for malformed configuration files."""


def _expr(eta_expr: str) -> float:
    # products like "0.9*0.73*0.4" are allowed for efficiency budgets
    parts = eta_expr.split("*")
    out = 1.0
    for part in parts:
        out *= float(part)
    return out


def load_config(path) -> tuple[SystemParams, DetectionChain, RunOptions]:
    """Parse a flat ``key = value`` file.

    Every physical key in :data:`PARAM_KEYS` is required. Keys of
    :class:`RunOptions` are optional. Values may be plain numbers or
    products (``0.9*0.73*0.4``).
    """
    path = Path(path)
    text = path.read_text()
    values: dict[str, float] = {}
    lines: dict[str, int] = {}
    seen: set[str] = set()
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in PARAM_KEYS and key not in OPTION_KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r} (first on line {lines[key]})")
            continue
        seen.add(key)
        lines[key] = lineno
        try:
            if key in OPTION_KEYS and OPTION_KEYS[key] == "int":
                values[key] = int(value)
            else:
                values[key] = _expr(value)
        except ValueError:
            errors.append(f"line {lineno}: key {key!r} expects a number, got {value!r}")
    missing = [k for k in PARAM_KEYS if k not in seen]
    if missing:
        errors.append("missing required keys: " + ", ".join(missing))
    if errors:
        raise ConfigError(f"{path}: " + "; ".join(errors))

    system = {attr: values[k] for k, (tgt, attr) in PARAM_KEYS.items() if tgt == "system"}
    chain = {attr: values[k] for k, (tgt, attr) in PARAM_KEYS.items() if tgt == "chain"}
    opts = {k: values[k] for k in OPTION_KEYS if k in values}
    return SystemParams(**system), DetectionChain(**chain), RunOptions(**opts)


def device_config_path() -> Path:
    return Path(str(resources.files("cavityreadout") / "data" / "device.cfg"))


def device_config() -> tuple[SystemParams, DetectionChain, RunOptions]:
    return load_config(device_config_path())
