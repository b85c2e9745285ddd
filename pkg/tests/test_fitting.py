import math

import numpy as np
import pytest

from cavityreadout import fitting
from cavityreadout.params import SystemParams


def test_exact_decay_recovery():
    t = np.linspace(0, 100, 101)
    r = fitting.fit_exponential_decay(t, fitting.decay_model(t, 1.0, 17.6, 0.1))
    assert r.authoritative
    for k, v in (("A", 1.0), ("tau", 17.6), ("B", 0.1)):
        assert r[k] == pytest.approx(v, abs=1e-9)


def test_decay_with_offset_time_axis():
    t = np.linspace(200, 300, 101)
    r = fitting.fit_exponential_decay(t, fitting.decay_model(t, 5.0, 17.6, 0.2))
    # the decaying part is only 3e-4 of the offset here, so the tolerance is looser
    assert r["tau"] == pytest.approx(17.6, rel=1e-6)
    assert r["A"] == pytest.approx(5.0, rel=1e-4)
    assert r.extra["A_at_first_sample"] == pytest.approx(5.0 * math.exp(-200 / 17.6), rel=1e-6)


def test_noisy_decay_coverage():
    t = np.linspace(0, 100, 200)
    clean = fitting.decay_model(t, 1.0, 17.6, 0.1)
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(100):
        y = clean + 0.01 * rng.normal(size=t.size)
        r = fitting.fit_exponential_decay(t, y)
        assert r.converged and abs(r["tau"] / 17.6 - 1) < 0.05
        lo, hi = r.interval("tau", 2.0)
        hits += lo <= 17.6 <= hi
    assert hits >= 90


def test_flat_decay_is_unidentifiable():
    r = fitting.fit_exponential_decay(np.arange(10.0), np.full(10, 3.0))
    assert "unidentifiable" in r.flags and not r.authoritative


def test_decay_input_errors():
    with pytest.raises(fitting.FitInputError):
        fitting.fit_exponential_decay([0, 1, 2], [1, 2, 3])
    with pytest.raises(fitting.FitInputError):
        fitting.fit_exponential_decay([0, 2, 1, 3], [1, 2, 3, 4])
    with pytest.raises(fitting.FitInputError):
        fitting.fit_exponential_decay([0, 1, 2, 3], [1, np.nan, 3, 4])


def test_recovery_exact():
    t = np.concatenate([[0.0], np.geomspace(10, 20000, 30)])
    r = fitting.fit_saturation_recovery(t, fitting.recovery_model(t, 2210.0, 0.4, 0.03))
    assert r.authoritative
    assert r["T1"] == pytest.approx(2210.0, rel=1e-9)
    assert r["A"] == pytest.approx(0.4, rel=1e-9)
    assert r["B"] == pytest.approx(0.03, rel=1e-9)


def test_recovery_rejects_decreasing_curve():
    t = np.linspace(0, 1000, 20)
    with pytest.raises(fitting.FitInputError, match="not a recovery"):
        fitting.fit_saturation_recovery(t, 1 - fitting.recovery_model(t, 300.0, 0.5, 0.0))


def test_recovery_flat_is_unidentifiable():
    r = fitting.fit_saturation_recovery(np.arange(8.0), np.ones(8))
    assert r.flags == ("unidentifiable",)


class FakeModel(fitting.PumpingModel):
    """Closed-form pumping curve with the same parameter roles (fast)."""

    def __call__(self, gamma, beta_prime, power):
        x = beta_prime * power
        self.calls += 1
        return gamma * x / (x + 2.0)


def test_pumping_fit_machinery(p):
    powers = np.geomspace(1, 1000, 8)
    truth = FakeModel(p).curve(0.075, 0.045, powers)
    r = fitting.fit_pumping_curve(powers, truth, p, model=FakeModel(p), gamma0=0.05)
    assert r.authoritative
    assert r["gamma"] == pytest.approx(0.075, rel=1e-6)
    assert r["beta_prime"] == pytest.approx(0.045, rel=1e-6)
    assert r.extra["R_B"] == pytest.approx(0.075 / 0.175, rel=1e-6)


def test_pumping_degenerate_inputs(p):
    r = fitting.fit_pumping_curve(np.full(6, 50.0), np.full(6, 0.05), p, model=FakeModel(p))
    assert r.flags == ("unidentifiable",)
    r = fitting.fit_pumping_curve(np.geomspace(1, 1000, 6), np.zeros(6), p, model=FakeModel(p))
    assert r.flags == ("unidentifiable",)
    with pytest.raises(fitting.FitInputError):
        fitting.fit_pumping_curve([1, 10, 100], [1, 2, 3], p)
    with pytest.raises(fitting.FitInputError):
        fitting.fit_pumping_curve([-1, 10, 100, 1000, 1e4], [1, 2, 3, 4, 5], p)


def test_pumping_model_shares_drive_products(p):
    m = fitting.PumpingModel(p)
    a = m(0.075, 0.045, 50.0)
    b = m(0.075, 0.09, 25.0)
    assert a == b and m.calls == 1
    assert 9 < 1 / a < 35


def test_lande_g_factor():
    assert fitting.lande_g_factor(37.1, 5.0) == pytest.approx(0.53, abs=5e-3)
    assert fitting.lande_g_factor(0.0, 5.0) == 0.0
    with pytest.raises(ValueError):
        fitting.lande_g_factor(1.0, 0.0)


def test_read_trace_csv(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("t_ns,counts\n0,1\n1,2\n\n2,3\n")
    t, y, s = fitting.read_trace_csv(f)
    assert np.array_equal(t, [0, 1, 2]) and np.array_equal(y, [1, 2, 3]) and s is None
    f.write_text("0,1,0.1\n1,2,0.1\n")
    assert np.array_equal(fitting.read_trace_csv(f)[2], [0.1, 0.1])
    for bad in ("0,1\n1,x\n", "0,1\n1,2,3,4\n", "", "0,1\n1,2,0.1\n"):
        f.write_text(bad)
        with pytest.raises(fitting.FitInputError):
            fitting.read_trace_csv(f)


def test_fit_result_dict():
    t = np.linspace(0, 50, 30)
    d = fitting.fit_exponential_decay(t, fitting.decay_model(t, 1, 10, 0)).to_dict()
    assert d["authoritative"] and set(d["params"]) == {"A", "tau", "B"}
