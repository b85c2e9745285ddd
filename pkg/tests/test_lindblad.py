import math

import numpy as np
import pytest

from cavityreadout import analytic, lindblad as lb
from cavityreadout.params import SystemParams, angular, derive_quantities, photon_flux


def bare(alpha=1.0, kappa=33.5, delta_c=0.0):
    return SystemParams(g=0.0, kappa=kappa, alpha=alpha, Gamma=0.1, gamma=0.075, gamma_d=0.0, delta_c=delta_c)


def test_hilbert_config():
    h = lb.HilbertConfig(3)
    assert h.n_fock == 4 and h.dim == 12
    for bad in (0, -1, 2.5):
        with pytest.raises(ValueError):
            lb.HilbertConfig(bad)


def test_vec_convention():
    rng = np.random.default_rng(0)
    A, B, X = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(3))
    lhs = lb.vec(A @ X @ B)
    rhs = lb._spre(A) @ lb._spost(B) @ lb.vec(X)
    assert np.allclose(lhs, rhs)
    assert np.allclose(lb.unvec(lb.vec(X)), X)


def test_trace_preserving_generator(p):
    gen = lb.build_generator(p, lb.DriveSpec.from_power(50.0, p, 0.045), t1=2210.0)
    tr = lb.vec(np.eye(gen.dim))
    assert np.max(np.abs(tr @ gen.matrix)) < 1e-10


def test_undriven_uncoupled_is_stationary():
    gen = lb.build_generator(bare(), lb.DriveSpec(0.0))
    rho0 = gen.basis_state(lb.UP, 0)
    for r in lb.evolve(gen, rho0, [0.0, 1.0, 100.0]):
        assert np.allclose(r.matrix, rho0.matrix, atol=1e-12)


def test_trion_branching_ratio(p):
    # free three-level atom; with g > 0 the cavity adds a Purcell channel to |up>
    gen = lb.build_generator(p.replace(g=0.0), lb.DriveSpec(0.0))
    rho = lb.evolve(gen, gen.basis_state(lb.TRION, 0), [200.0])[0]
    up, down = gen.population(lb.UP, rho), gen.population(lb.DOWN, rho)
    assert gen.population(lb.TRION, rho) < 1e-9
    assert up / down == pytest.approx(0.1 / 0.075, rel=1e-6)


def test_evolve_rejects_bad_grid(p):
    gen = lb.build_generator(p, lb.DriveSpec(0.0), lb.HilbertConfig(1))
    with pytest.raises(ValueError):
        lb.evolve(gen, gen.state(), [1.0, 0.5])


def test_evolve_flags_invalid_state(p):
    gen = lb.build_generator(p, lb.DriveSpec(0.0), lb.HilbertConfig(1))
    bad = lb.DensityOperator(2 * gen.state().matrix)
    with pytest.raises(lb.EvolutionError, match="t = 0"):
        lb.evolve(gen, bad, [0.0])


def test_density_operator_violations():
    m = np.diag([1.2, -0.2]).astype(complex)
    v = lb.DensityOperator(m).violations()
    assert any("negative eigenvalue" in x for x in v)
    m = np.array([[0.5, 0.3], [0.0, 0.5]], dtype=complex)
    assert any("non-Hermitian" in x for x in lb.DensityOperator(m).violations())


def test_undriven_steady_state_is_degenerate(p):
    gen = lb.build_generator(p.replace(g=0.0), lb.DriveSpec(0.0), lb.HilbertConfig(1))
    with pytest.raises(lb.DegenerateSteadyState):
        lb.steady_state(gen)
    rho = lb.steady_state(gen, initial=gen.basis_state(lb.TRION))
    assert gen.population(lb.UP, rho) == pytest.approx(4 / 7, rel=1e-8)
    assert gen.photon_number(rho) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("frame", ["displaced", "lab"])
@pytest.mark.parametrize("delta", [0.0, 12.0])
def test_bare_cavity_coherent_state(frame, delta):
    q = bare(alpha=0.92, delta_c=delta)
    eps = 0.7
    gen = lb.build_generator(q, lb.DriveSpec(eps), lb.HilbertConfig(8), frame=frame)
    rho = lb.steady_state(gen, initial=gen.state("down"))
    kex, k, dc = angular(q.kappa_ex), angular(q.kappa), angular(delta)
    assert gen.photon_number(rho) == pytest.approx(0.5 * kex * eps**2 / ((k / 2) ** 2 + dc**2), rel=1e-8)


def test_frames_agree(p):
    drive = lb.DriveSpec.from_power(50.0, p, 0.045)
    t = np.linspace(0, 20, 5)
    ga = lb.build_generator(p, drive, lb.HilbertConfig(3))
    gb = lb.build_generator(p, drive, lb.HilbertConfig(6), frame="lab")
    # start both from the bare-cavity field of the spin-up manifold
    ra = lb.evolve(ga, ga.state("up"), t)
    vacuum_lab = lb.steady_state(
        lb.build_generator(p.replace(g=0.0), drive, lb.HilbertConfig(6), frame="lab"), initial=gb.state("up")
    )
    rb = lb.evolve(gb, vacuum_lab, t)
    for a, b in zip(ra, rb):
        assert ga.population(lb.DOWN, a) == pytest.approx(gb.population(lb.DOWN, b), abs=1e-6)
        assert lb.detected_flux(a, ga) == pytest.approx(lb.detected_flux(b, gb), rel=1e-5)


def test_weak_drive_matches_transfer_amplitude(p):
    for delta in (0.0, 5.0, -20.0):
        r = lb.weak_drive_reflection(p, delta)
        assert abs(r - analytic.transfer_amplitudes(delta, True, p).t_h) < 1e-3
    assert lb.weak_drive_reflection(p, 0.0).real == pytest.approx(0.629, abs=1e-3)
    assert lb.weak_drive_reflection(p, 0.0, spin="down").real == pytest.approx(0.08, abs=1e-3)
    assert abs(lb.weak_drive_reflection(bare(), 0.0)) < 1e-6


def test_weak_drive_unattainable(p):
    with pytest.raises(lb.ConvergenceError):
        lb.weak_drive_reflection(p, 0.0, epsilon=50.0)


@pytest.mark.parametrize("alpha", [1.0, 0.92])
def test_pumping_rate_weak_drive_limit(p, alpha):
    # the single-photon formula is for ideal in-coupling; a lossy mirror
    # scales the flip probability per incident photon by alpha
    q = p.replace(gamma_d=0.0, alpha=alpha)
    power = 0.05
    rate = lb.pumping_rate(q, power, 0.045)
    flux = 0.045 * photon_flux(power, q.wavelength)
    _, p_flip = analytic.single_photon_probabilities(q)
    assert rate / flux == pytest.approx(alpha * p_flip, rel=0.02)


def test_pumping_rate_device(p):
    rate = lb.pumping_rate(p, 50.0, 0.045)
    assert 9.0 <= 1 / rate <= 35.0
    gen = lb.build_generator(p, lb.DriveSpec.from_power(50.0, p, 0.045))
    assert lb.slowest_rate(gen) == pytest.approx(rate, rel=1e-4)
    h4 = lb.pumping_rate(p, 50.0, 0.045, lb.HilbertConfig(4))
    assert h4 == pytest.approx(rate, rel=1e-5)
    with pytest.raises(ValueError):
        lb.pumping_rate(p, 0.0, 0.045)


def test_spectral_and_stepped_integrals_agree(p):
    gen = lb.build_generator(p, lb.DriveSpec.from_power(50.0, p, 0.045), t1=2210.0)
    t = np.linspace(0, 200, 41)
    op = [gen.flux_operator()]
    va, ia = lb.integrate_observables(gen, gen.state("up"), t, op, method="eig")
    vb, ib = lb.integrate_observables(gen, gen.state("up"), t, op, method="expm")
    assert np.allclose(va, vb, rtol=1e-7, atol=1e-10)
    assert np.allclose(ia, ib, rtol=1e-7, atol=1e-10)


def test_flux_zero_without_drive(p):
    gen = lb.build_generator(p, lb.DriveSpec(0.0))
    assert lb.detected_flux(gen.state("up"), gen) == pytest.approx(0.0, abs=1e-15)


def _flux_ratio(q):
    gen = lb.build_generator(q, lb.DriveSpec(1e-3), lb.HilbertConfig(2), recycle=True)
    fu = lb.detected_flux(lb.steady_state(gen, initial=gen.state("up")), gen)
    fd = lb.detected_flux(lb.steady_state(gen, initial=gen.state("down")), gen)
    return fu / fd


def test_flux_ratio_matches_reflection(p):
    # coherent reflection only: without pure dephasing the incoherent part
    # vanishes at weak drive
    q = p.replace(gamma_d=0.0)
    d = derive_quantities(q)
    ru = analytic.resonant_reflection("up", d, q.alpha)
    rd = analytic.resonant_reflection("down", d, q.alpha)
    assert _flux_ratio(q) == pytest.approx(abs(1 + ru) ** 2 / abs(1 + rd) ** 2, rel=1e-3)
    # dephasing adds incoherently scattered light on top of the coherent part
    d = derive_quantities(p)
    coherent = abs(1 + analytic.resonant_reflection("up", d, p.alpha)) ** 2 / abs(1 + analytic.resonant_reflection("down", d, p.alpha)) ** 2
    assert _flux_ratio(p) > coherent


def test_bare_spectrum_nulled_in_matched_basis(chain):
    q = bare()
    for dp in (-30.0, -4.0, 0.0, 7.0, 25.0):
        s = lb.reflection_spectrum(q, [dp], basis_detuning=dp, chain=chain)
        assert s[0] == pytest.approx(chain.extinction_floor, abs=1e-7)


def test_coupled_spectrum_peaks_at_resonance(p):
    grid = np.linspace(-20, 20, 9)
    coupled = lb.reflection_spectrum(p, grid)
    plain = lb.reflection_spectrum(bare(alpha=p.alpha), grid)
    assert np.argmax(coupled) == 4 and np.argmin(plain) == 4


def test_accumulated_counts(p, chain):
    assert lb.accumulated_counts(p, chain, "up", 0.0) == 0.0
    T = np.array([75.0, 10.0, 200.0])
    n = lb.accumulated_counts(p, chain, "up", T, t1=2210.0)
    assert n[1] < n[0] < n[2]
    assert lb.accumulated_counts(p, chain, "up", 75.0, t1=2210.0) == pytest.approx(n[0])
    assert lb.accumulated_counts(p, chain, "down", 75.0, t1=2210.0) == pytest.approx(0.1, rel=1e-3)
    with pytest.raises(ValueError):
        lb.accumulated_counts(p, chain, "up", -1.0)


def test_count_curve_rate_is_derivative(p, chain):
    t = np.linspace(0, 100, 2001)
    n, rate = lb.count_curve(p, chain, "up", t)
    assert np.allclose(np.gradient(n, t)[5:-5], rate[5:-5], rtol=1e-3)


def test_converged_truncation_raises():
    with pytest.raises(lb.ConvergenceError):
        lb.converged_truncation(lambda h: float(h.n_max), n_start=1, n_limit=4)
    val, n = lb.converged_truncation(lambda h: 1.0 + 10.0 ** (-3 * h.n_max), n_start=1)
    assert n == 2 and val == pytest.approx(1.0 + 1e-6)


def test_trajectory_table(p, chain):
    gen = lb.build_generator(p, lb.DriveSpec.from_power(50.0, p, 0.045))
    tab = lb.trajectory_table(gen, gen.state("up"), [0.0, 10.0, 50.0], chain)
    assert tab.shape == (3, len(lb.TRAJECTORY_COLUMNS))
    assert np.allclose(tab[:, 1:4].sum(axis=1), 1.0)
    assert tab[2, 2] > tab[1, 2] > 1e-6 > abs(tab[0, 2])
