import cmath
import math

import pytest
from hypothesis import given, strategies as st

from cavityreadout import analytic
from cavityreadout.params import UNBOUNDED, SystemParams


def bare(kappa=33.5, alpha=1.0):
    return SystemParams(g=0.0, kappa=kappa, alpha=alpha, Gamma=0.1, gamma=0.075, gamma_d=0.0)


def test_resonant_reflection_limits():
    assert analytic.resonant_reflection("up", 1e12, 1.0) == pytest.approx(1.0)
    assert analytic.resonant_reflection("up", 0.0, 1.0) == -1.0
    assert analytic.resonant_reflection("down", 0.0, 1.0) == -1.0
    assert analytic.resonant_reflection("up", 1.0, 0.5) == pytest.approx(0.5)
    assert analytic.resonant_reflection("down", 1.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        analytic.resonant_reflection("left", 1.0, 0.5)


def test_resonant_reflection_device(p):
    from cavityreadout.params import derive_quantities

    d = derive_quantities(p)
    assert analytic.resonant_reflection("up", d, p.alpha) == pytest.approx(0.2577, abs=1e-4)
    assert analytic.resonant_reflection("down", d, p.alpha) == pytest.approx(-0.84)


def test_transfer_bare():
    t = analytic.transfer_amplitudes(0.0, False, bare())
    assert t.t_h == pytest.approx(0.0, abs=1e-15) and t.t_v == pytest.approx(-1.0)
    t = analytic.transfer_amplitudes(33.5 / 2, False, bare())
    assert t.t_h == pytest.approx((1 + 1j) / 2)
    assert abs(t.t_h) ** 2 == pytest.approx(0.5)


def test_transfer_coupled_resonance(p):
    t = analytic.transfer_amplitudes(0.0, True, p)
    assert t.t_h.real == pytest.approx(0.6289, abs=1e-4)
    assert abs(t.t_h.imag) < 1e-12


@given(delta=st.floats(-200, 200), kappa=st.floats(1, 100))
def test_lossless_bare_cavity_conserves_energy(delta, kappa):
    assert analytic.transfer_amplitudes(delta, False, bare(kappa)).total == pytest.approx(1.0, abs=1e-12)


@given(delta=st.floats(-200, 200), alpha=st.floats(0, 1))
def test_lossy_cavity_never_gains(p, delta, alpha):
    assert analytic.transfer_amplitudes(delta, True, p.replace(alpha=alpha)).total <= 1 + 1e-12


def test_optimal_angle():
    assert abs(analytic.optimal_polarizer_angle(1e-9, 1e-9)) == pytest.approx(math.pi / 4, abs=1e-8)
    assert analytic.optimal_polarizer_angle(1.0, 1.0) == pytest.approx(math.pi / 4)
    th = analytic.optimal_polarizer_angle(0.045, 0.045)
    assert th == pytest.approx(math.atan(-1 / 0.91), abs=1e-12)
    assert th == pytest.approx(-0.8326, abs=2e-4)
    assert math.sin(th) ** 2 == pytest.approx(0.547, abs=1e-3)


def test_optimal_angle_degenerate_denominator():
    # beta beta' = (1 - beta)(1 - beta')
    assert analytic.optimal_polarizer_angle(0.5, 0.5) == pytest.approx(math.pi / 2)


def test_optimal_angle_nulls_spin_down():
    b = 0.045
    th = analytic.optimal_polarizer_angle(b, b)
    assert analytic.polarizer_collection_general(-1.0, b, b, th) == pytest.approx(0.0, abs=1e-15)


def test_collection_probability():
    assert analytic.collection_probability(-1.0, 0.045) == 0.0
    assert analytic.collection_probability(1.0, 1.0) == 1.0
    assert analytic.collection_probability(0.2577, 0.045) == pytest.approx(0.01780, abs=1e-5)
    th = analytic.optimal_polarizer_angle(0.045, 0.045)
    exact = analytic.polarizer_collection_general(0.2577, 0.045, 0.045, th)
    approx = 0.25 * 0.045 * 0.045 * abs(1.2577) ** 2
    assert exact / approx == pytest.approx(2 * math.sin(th) ** 2, rel=1e-2)
    with pytest.raises(ValueError):
        analytic.collection_probability(0.2, 0.045, theta=th)


def test_detuned_basis():
    b = analytic.detuned_basis(0.0, 33.5)
    assert b.theta == 0.0 and b.phi == pytest.approx(math.pi / 2)
    assert analytic.detuned_basis(33.5 / 2, 33.5).theta == pytest.approx(math.pi / 4)
    assert analytic.detuned_basis(10.0, 33.5).theta == pytest.approx(0.5383, abs=1e-4)


@given(delta=st.floats(-100, 100), kappa=st.floats(1, 100))
def test_detuned_basis_nulls_bare_cavity(delta, kappa):
    t = analytic.transfer_amplitudes(delta, False, bare(kappa))
    assert abs(analytic.project_output(analytic.detuned_basis(delta, kappa), t)) < 1e-12


def test_project_identity_for_zero_angle(p):
    t = analytic.transfer_amplitudes(3.0, True, p)
    assert analytic.project_output(analytic.PolarizationBasis(0.0, math.pi / 2), t) == t.t_h


def test_project_coupled_detuned_nonzero(p):
    t = analytic.transfer_amplitudes(10.0, True, p)
    assert abs(analytic.project_output(analytic.detuned_basis(10.0, p.kappa), t)) > 0.05


def test_single_photon_probabilities(p):
    pr, pf = analytic.single_photon_probabilities(p)
    assert pr == pytest.approx(0.9724, abs=1e-4)
    assert pf == pytest.approx(0.011742, abs=1e-6)
    pr, pf = analytic.single_photon_probabilities(p, include_dephasing=True)
    assert pr == pytest.approx(0.3559, abs=1e-4)
    assert pf == pytest.approx(0.004298, abs=1e-6)
    assert analytic.single_photon_probabilities(p.replace(g=0.0)) == (0.0, 0.0)


@given(g=st.floats(0.1, 30), gamma=st.floats(1e-4, 1), deph=st.booleans())
def test_budget_is_probability_ratio(p, g, gamma, deph):
    q = p.replace(g=g, gamma=gamma)
    pr, pf = analytic.single_photon_probabilities(q, deph)
    assert pr / pf == pytest.approx(analytic.photons_before_flip(q), rel=1e-12)


def test_photon_budgets(p):
    assert analytic.photons_before_flip(p) == pytest.approx(82.8, abs=0.05)
    assert analytic.photons_before_flip(p.replace(g=0.0)) == 0.0
    assert analytic.photons_before_flip(p.replace(gamma=0.0)) == UNBOUNDED
    assert analytic.bare_dot_photon_budget(0.5) == 1.0
    assert analytic.bare_dot_photon_budget(0.43) == pytest.approx(1.3256, abs=1e-4)
    assert analytic.bare_dot_photon_budget(0.002) == pytest.approx(499)
    assert analytic.bare_dot_photon_budget(0.0) == UNBOUNDED


def test_basis_input_weight():
    assert analytic.basis_input_weight(0.0, 10.0) == 1.0
    assert cmath.phase(analytic.basis_input_weight(5.0, 10.0)) == pytest.approx(-math.pi / 4)
