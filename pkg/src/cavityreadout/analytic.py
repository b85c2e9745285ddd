"""Closed-form input-output relations for the one-sided cavity.

Sign conventions: rotating frame at the probe frequency, detunings are
``omega_cavity - omega_probe``; the cavity field obeys
``dc/dt = -(i delta_c + kappa/2) c - g s13 + sqrt(kappa_ex/2) a_in``.
Everything here is a ratio, so rates may be given in GHz or rad/ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .params import UNBOUNDED, DerivedParams, SystemParams


@dataclass(frozen=True)
class PolarizationBasis:
    theta: float
    phi: float = 0.0


@dataclass(frozen=True)
class TransferAmplitudes:
    t_h: complex
    t_v: complex

    @property
    def total(self) -> float:
        return abs(self.t_h) ** 2 + abs(self.t_v) ** 2


def resonant_reflection(spin: str, d: DerivedParams | float, alpha: float) -> float:
    """Reflection coefficient for a resonant probe.

    ``d`` is either a :class:`DerivedParams` or the cooperativity itself.
    """
    C = d.C if isinstance(d, DerivedParams) else float(d)
    if spin == "up":
        return 1.0 - 2.0 * alpha / (C + 1.0)
    if spin == "down":
        return 1.0 - 2.0 * alpha
    raise ValueError(f"spin must be 'up' or 'down', got {spin!r}")


def cavity_response(
    p: SystemParams, delta_c: float, delta_x: float, coupled: bool, dephasing: bool = True
) -> complex:
    """Steady intracavity amplitude per unit drive, <c>/epsilon."""
    s = math.sqrt(p.kappa_ex / 2.0)
    cav = 0.5 * p.kappa + 1j * delta_c
    if not coupled or p.g == 0:
        return s / cav
    width = p.Gamma_d if dephasing else 0.5 * (p.Gamma + p.gamma)
    dip = width + 1j * delta_x
    return s * dip / (cav * dip + p.g * p.g)


def transfer_amplitudes(
    delta_probe: float, coupled: bool, p: SystemParams, dephasing: bool = True
) -> TransferAmplitudes:
    """H -> H and H -> V amplitudes of the reflected field.

    ``delta_probe`` is added to both configured detunings, i.e. it lowers the
    probe frequency by that amount (GHz).
    """
    if p.kappa <= 0:
        raise ValueError("kappa must be > 0")
    dc = p.delta_c + delta_probe
    dx = p.delta_x + delta_probe
    leak = math.sqrt(p.kappa_ex / 2.0) * cavity_response(p, dc, dx, coupled, dephasing)
    return TransferAmplitudes(t_h=1.0 - leak, t_v=-leak)


def optimal_polarizer_angle(beta: float, beta_prime: float) -> float:
    """Polarizer angle that cancels the mode-mismatched surface reflection.

    Only sin(theta)**2 enters the collection probability, so the branch is
    irrelevant; the principal arctangent is returned.  When the denominator
    vanishes the limit pi/2 is returned.
    """
    mis = math.sqrt((1.0 - beta) * (1.0 - beta_prime))
    match = math.sqrt(beta * beta_prime)
    den = mis - match
    if den == 0.0:
        return math.pi / 2.0
    return math.atan(-(mis + match) / den)


def collection_probability(
    r: complex,
    beta: float,
    theta: float | None = None,
    beta_prime: float | None = None,
) -> float:
    """Collection probability of a reflected photon.

    Without ``theta`` returns the per-cavity-photon value beta |1+r|^2 / 4.
    With ``theta`` and ``beta_prime`` returns the per-incident-photon value
    beta beta' sin^2(theta) |1+r|^2 / 2, valid at the optimal angle.
    """
    amp2 = abs(1.0 + r) ** 2
    if theta is None:
        return 0.25 * beta * amp2
    if beta_prime is None:
        raise ValueError("beta_prime is required together with theta")
    return 0.5 * beta * beta_prime * math.sin(theta) ** 2 * amp2


def polarizer_collection_general(
    r: complex, beta: float, beta_prime: float, theta: float
) -> float:
    """Collection probability for an arbitrary analyzer angle theta."""
    a = math.sqrt(beta * beta_prime / 2.0) * (math.cos(theta) + r * math.sin(theta))
    b = math.sqrt((1 - beta) * (1 - beta_prime) / 2.0) * (math.cos(theta) + math.sin(theta))
    return abs(a + b) ** 2


def detuned_basis(delta: float, kappa: float) -> PolarizationBasis:
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    return PolarizationBasis(theta=math.atan(2.0 * delta / kappa), phi=math.pi / 2.0)


def project_output(basis: PolarizationBasis, t: TransferAmplitudes) -> complex:
    return t.t_h * math.cos(basis.theta) + t.t_v * complex(math.cos(basis.phi), math.sin(basis.phi)) * math.sin(basis.theta)


def basis_input_weight(delta: float, kappa: float) -> complex:
    """Input-field coefficient of the output operator in the detuned basis."""
    return (0.5 * kappa) / (0.5 * kappa + 1j * delta)


def single_photon_probabilities(
    p: SystemParams, include_dephasing: bool = False
) -> tuple[float, float]:
    """(P_ref, P_flip) for one resonant photon with the spin in |up>."""
    g2 = p.g * p.g
    width = p.Gamma_d if include_dephasing else 0.5 * (p.Gamma + p.gamma)
    den = (0.5 * p.kappa * width + g2) ** 2
    if g2 == 0:
        return 0.0, 0.0
    return g2 * g2 / den, g2 * p.kappa * p.gamma / 2.0 / den


def photons_before_flip(p: SystemParams) -> float:
    if p.g == 0:
        return 0.0
    if p.gamma <= 0:
        return UNBOUNDED
    return 2.0 * p.g * p.g / (p.kappa * p.gamma)


def bare_dot_photon_budget(R_B: float) -> float:
    if R_B <= 0:
        return UNBOUNDED
    return (1.0 - R_B) / R_B


def enhancement_factor(p: SystemParams) -> float:
    """2 g^2 / (kappa Gamma): ratio of cavity to bare-dot photon budgets."""
    return 2.0 * p.g * p.g / (p.kappa * p.Gamma)
