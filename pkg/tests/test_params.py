import math

import pytest
from hypothesis import given, strategies as st

from cavityreadout.params import (
    PARAM_KEYS,
    UNBOUNDED,
    ConfigError,
    DetectionChain,
    SystemParams,
    angular,
    derive_quantities,
    load_config,
    device_config_path,
    photon_flux,
    validate,
)


def test_cooperativity_and_gamma_d(p):
    d = derive_quantities(p)
    assert d.Gamma_d == pytest.approx(4.2, abs=1e-12)
    assert d.C == pytest.approx(2 * 10.2**2 / (33.5 * 4.2), rel=1e-12)
    assert round(d.C, 3) == 1.479
    assert d.R_B == pytest.approx(0.075 / 0.175)
    assert d.kappa_ex == pytest.approx(0.92 * 33.5)


def test_uncoupled_cavity(p):
    d = derive_quantities(p.replace(g=0.0))
    assert d.C == 0 and d.N_budget == 0
    assert d.tau_mod == UNBOUNDED


def test_enhancement_ratio(p):
    d = derive_quantities(p)
    assert round(d.N_budget / d.N_prime, 1) == 62.1


def test_zero_cross_decay_is_unbounded(p):
    d = derive_quantities(p.replace(gamma=0.0))
    assert math.isinf(d.N_budget) and math.isinf(d.N_prime)


def test_tau_mod(p):
    tau = derive_quantities(p).tau_mod
    assert tau == pytest.approx(33.5 / (2 * math.pi * 4 * 10.2**2))


def test_validate_device_set_is_clean(device):
    p, d, _ = device
    assert validate(p, d) == []


def test_validate_names_alpha(p):
    v = validate(p.replace(alpha=1.2))
    assert len(v) == 1 and v[0].field == "alpha"


def test_validate_kappa_zero_only_for_cavity_ops(p):
    q = p.replace(kappa=0.0)
    assert [x.field for x in validate(q)] == ["kappa"]
    assert validate(q, cavity_ops=False) == []


def test_validate_reports_every_violation(p):
    v = validate(p.replace(alpha=-1, g=-1), DetectionChain(beta=2.0, dead_time=-1))
    assert {x.field for x in v} == {"alpha", "g", "beta", "dead_time"}


@given(alpha=st.floats(-2, 3), g=st.floats(-5, 30))
def test_validate_matches_ranges(p, alpha, g):
    names = {x.field for x in validate(p.replace(alpha=alpha, g=g))}
    assert ("alpha" in names) == (not 0 <= alpha <= 1)
    assert ("g" in names) == (g < 0)


def test_bundled_config(device):
    p, d, opts = device
    assert (p.g, p.kappa, p.alpha, p.Gamma, p.gamma) == (10.2, 33.5, 0.92, 0.1, 0.075)
    assert p.Gamma_d == pytest.approx(4.2)
    assert d.beta == d.beta_prime == 0.045
    assert d.eta_total == pytest.approx(0.045 * 0.9 * 0.73 * 0.4 * 0.35)
    assert opts.probe_power_nw == 50 and opts.t1_ns == 2210


def test_empty_file_lists_required_keys(tmp_path):
    f = tmp_path / "empty.cfg"
    f.write_text("")
    with pytest.raises(ConfigError) as e:
        load_config(f)
    for key in PARAM_KEYS:
        assert key in str(e.value)


def test_partial_file_lists_missing(tmp_path):
    f = tmp_path / "a.cfg"
    f.write_text("alpha = 0.92\n")
    msg = str(pytest.raises(ConfigError, load_config, f).value)
    assert "g_ghz" in msg and "kappa_ghz" in msg
    assert "'alpha'" not in msg.split("missing required keys:")[1]


def test_unknown_and_mistyped_keys_report_lines(tmp_path):
    text = device_config_path().read_text() + "\nfoo = 1\nwindow_max_ns = abc\n"
    f = tmp_path / "b.cfg"
    f.write_text(text)
    n = len(text.splitlines())
    msg = str(pytest.raises(ConfigError, load_config, f).value)
    assert f"line {n - 1}: unknown key 'foo'" in msg
    assert f"line {n}: key 'window_max_ns' expects a number" in msg


def test_duplicate_key(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text(device_config_path().read_text() + "\ng_ghz = 3\n")
    assert "duplicate key 'g_ghz'" in str(pytest.raises(ConfigError, load_config, f).value)


def test_optional_defaults(tmp_path):
    lines = [l for l in device_config_path().read_text().splitlines() if not l.startswith(("probe_power", "t1_ns"))]
    f = tmp_path / "d.cfg"
    f.write_text("\n".join(lines))
    _, _, opts = load_config(f)
    assert opts.probe_power_nw == 50.0 and opts.t1_ns == 2210.0 and opts.n_max == 3


def test_units():
    assert angular(1.0) == pytest.approx(2 * math.pi)
    # 50 nW at 928 nm, about 2.3e2 photons per ns
    assert photon_flux(50.0, 928.0) == pytest.approx(50e-9 * 928e-9 / (6.62607015e-34 * 299792458) * 1e-9)
