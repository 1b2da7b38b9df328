import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_channels
from irs_underlay.channel import (ChannelSet, CsiErrorModel, cascade, dump_channels, effective,
                                  exp_corr, inject_errors, load_channels, path_gain, synthesize, ula,
                                  ura, _angle)
from irs_underlay.errors import NonUnitModulus
from irs_underlay.scenario import ScenarioConfig, place_nodes


def test_path_gain_at_irs_distance():
    cfg = ScenarioConfig()
    d = float(np.hypot(5, 5))
    assert path_gain(cfg, d, 2.2) == pytest.approx(1e-3 * d ** -2.2)
    assert path_gain(cfg, 7.07, 2.2) == pytest.approx(1e-3 * 7.07 ** -2.2)


def test_rician_limit_is_line_of_sight():
    cfg = ScenarioConfig(kappa=1e12, varpi=1e12)
    rng = np.random.default_rng(0)
    pos = place_nodes(cfg, rng)
    ch = synthesize(cfg, pos, rng)
    phi, d = _angle(pos.st, pos.sr[0])
    los = np.sqrt(path_gain(cfg, d, cfg.alpha_rx)) * ula(cfg.M, phi)
    assert np.linalg.norm(ch.h_d[0] - los) <= 1e-5 * np.linalg.norm(los)
    phi, d = _angle(pos.st, pos.irs)
    los = np.sqrt(path_gain(cfg, d, cfg.alpha_irs)) * np.outer(ura(cfg.N, phi + np.pi), ula(cfg.M, phi).conj())
    assert np.linalg.norm(ch.H - los) <= 1e-5 * np.linalg.norm(los)


def test_rayleigh_entry_variance_matches_path_gain():
    cfg = ScenarioConfig(kappa=0.0, varpi=0.0, K=1, U=1, N=2, M=2, L=2)
    rng = np.random.default_rng(1)
    pos = place_nodes(cfg, rng)
    draws = np.array([synthesize(cfg, pos, rng).H for _ in range(10_000)])
    _, d = _angle(pos.st, pos.irs)
    assert np.mean(np.abs(draws) ** 2) == pytest.approx(path_gain(cfg, d, cfg.alpha_irs), rel=0.05)


def test_correlated_nlos_covariance():
    cfg = ScenarioConfig(kappa=0.0, corr=0.6, K=1, U=1, M=4)
    rng = np.random.default_rng(2)
    pos = place_nodes(cfg, rng)
    phi, d = _angle(pos.st, pos.sr[0])
    x = np.array([synthesize(cfg, pos, rng).h_d[0] for _ in range(4000)]) / np.sqrt(path_gain(cfg, d, cfg.alpha_rx))
    emp = x.T @ x.conj() / len(x)
    assert np.abs(emp - exp_corr(4, 0.6)).max() < 0.08


def test_synthesis_deterministic():
    cfg = ScenarioConfig()
    chans = []
    for _ in range(2):
        rng = np.random.default_rng(11)
        chans.append(synthesize(cfg, place_nodes(cfg, rng), rng))
    for name in ("h_d", "H", "Gu", "Hk"):
        assert np.array_equal(getattr(chans[0], name), getattr(chans[1], name))


def test_cascade_identities(rng):
    ch = random_channels(rng, K=1, U=1, M=2, N=3)
    brute = np.array([[np.conj(ch.h_r[0, n]) * ch.H[n, m] for m in range(2)] for n in range(3)])
    assert np.allclose(ch.Hk[0], brute, atol=0, rtol=1e-15)
    ones = cascade(ChannelSet(**{**ch.__dict__, "h_r": np.ones((1, 3), complex)}))
    assert np.array_equal(ones.Hk[0], ch.H)
    sel = cascade(ChannelSet(**{**ch.__dict__, "h_r": np.eye(3, dtype=complex)[:1]}))
    assert np.array_equal(sel.Hk[0][0], ch.H[0]) and not np.any(sel.Hk[0][1:])


@given(st.complex_numbers(min_magnitude=0.1, max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_cascade_scales_conjugately(c):
    rng = np.random.default_rng(0)
    ch = random_channels(rng)
    scaled = cascade(ChannelSet(**{**ch.__dict__, "h_r": c * ch.h_r}))
    assert np.allclose(scaled.Hk, np.conj(c) * ch.Hk)


def test_effective_without_reflection_is_direct(rng):
    ch = random_channels(rng)
    ch.Hk = np.zeros_like(ch.Hk)
    eff = effective(ch, np.ones(ch.H.shape[0]))
    assert np.array_equal(eff.h, ch.h_d)


def test_effective_matches_theta_form(rng):
    ch = random_channels(rng, N=5)
    theta = rng.uniform(0, 2 * np.pi, 5)
    ups = np.exp(-1j * theta)  # ups = Diag(Theta^*)
    eff = effective(ch, ups)
    Theta = np.diag(np.exp(1j * theta))
    for k in range(ch.h_d.shape[0]):
        # h^H = h_d^H + h_r^H Theta H
        direct = ch.h_d[k].conj() + ch.h_r[k].conj() @ Theta @ ch.H
        assert np.allclose(eff.h[k].conj(), direct)


def test_effective_scalar_case(rng):
    ch = random_channels(rng, K=1, U=1, M=2, L=2, N=1)
    ups = np.exp(1j * 0.3)
    eff = effective(ch, [ups])
    assert np.allclose(eff.h[0], ch.h_d[0] + np.conj(ch.Hk[0, 0]) * ups)


def test_effective_linear_in_ups(rng):
    ch = random_channels(rng)
    a, b = (np.exp(1j * rng.uniform(0, 6, 4)) for _ in range(2))
    h = lambda u: effective(ch, u, check=False).h - ch.h_d
    assert np.allclose(h(a + 2j * b), h(a) + 2j * h(b))


def test_effective_rejects_non_unit(rng):
    ch = random_channels(rng)
    with pytest.raises(NonUnitModulus):
        effective(ch, np.full(4, 1.01))


def test_ciusi_channel_ignores_direct_pt_path(rng):
    from irs_underlay.sysmodel import PrimaryPrecoder, ciusi_power
    ch = random_channels(rng)
    f = PrimaryPrecoder(rng.standard_normal((2, 3)) + 0j)
    ups = np.exp(1j * rng.uniform(0, 6, 4))
    before = ciusi_power(ch, ups, f)
    ch.g_d = 100 * ch.g_d
    assert np.array_equal(before, ciusi_power(ch, ups, f))


def test_perfect_csi_estimate_is_truth(rng):
    ch = random_channels(rng)
    est, err = inject_errors(ch, CsiErrorModel.isotropic(2, 2), rng)
    for name in ("h_d", "Hk", "v_d", "Vu", "Gu"):
        assert np.array_equal(getattr(est, name), getattr(ch, name))


def test_error_reconstruction_and_variance(rng):
    ch = random_channels(rng, K=1, U=1, M=4)
    model = CsiErrorModel.isotropic(1, 1, hd=0.01, Hk=0.02, Gu=0.03)
    norms = []
    for _ in range(10_000):
        est, err = inject_errors(ch, model, rng)
        norms.append(np.sum(np.abs(err.h_d) ** 2))
    assert np.mean(norms) == pytest.approx(0.04, rel=0.05)
    est, err = inject_errors(ch, model, rng)
    for name in ("h_d", "Hk", "v_d", "Vu", "Gu"):
        t, d = getattr(ch, name), getattr(err, name)
        # one rounding of the subtraction, measured on the larger operand
        bound = np.finfo(float).eps * np.maximum(np.abs(t), np.abs(d))
        assert np.all(np.abs(getattr(est, name) + d - t) <= 2 * bound)
    # channels outside the error model stay exact
    assert np.array_equal(est.g_d, ch.g_d) and np.array_equal(est.H, ch.H)


def test_error_model_rejects_negative():
    with pytest.raises(ValueError):
        CsiErrorModel.isotropic(1, 1, hd=-1.0)


def test_dump_round_trip(tmp_path, rng):
    ch = random_channels(rng)
    dump_channels(ch, tmp_path / "c.txt", seed=5)
    text = (tmp_path / "c.txt").read_text()
    assert text.startswith("# irs-underlay channels seed=5")
    back = load_channels(tmp_path / "c.txt")
    for name, val in ch.__dict__.items():
        assert np.array_equal(getattr(back, name), val)
