import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bare_config, random_channels
from irs_underlay.channel import ChannelSet, cascade
from irs_underlay.errors import RankDeficient, SaturationExceeded
from irs_underlay.scenario import ScenarioConfig
from irs_underlay.sysmodel import (DesignSolution, PrimaryPrecoder, ReflectVector, check_feasibility,
                                   ciusi, eh_forward, eh_inverse, eh_saturation, fisi, rate,
                                   received_eh_input, sinr, sinr_all, zf_primary_precoder)

EH = (2.463, 1.635, 0.826)


def scalar_channels(h=(1.0,), u=(0.0,), v=None, M=1, N=0):
    h = np.atleast_2d(np.asarray(h, complex))
    v = np.zeros((0, M), complex) if v is None else np.atleast_2d(np.asarray(v, complex))
    U = v.shape[0]
    return cascade(ChannelSet(h_d=h, v_d=v, g_d=np.eye(U, 1, dtype=complex) if U else np.zeros((0, 1), complex),
                              u_d=np.atleast_2d(np.asarray(u, complex)).reshape(h.shape[0], 1),
                              h_r=np.zeros((h.shape[0], N), complex), g_r=np.zeros((U, N), complex),
                              H=np.zeros((N, M), complex), G=np.zeros((N, 1), complex)))


def design(w, rho, N=0, tau_bar=1.0):
    return DesignSolution(np.atleast_2d(np.asarray(w, complex)), np.atleast_1d(np.asarray(rho, float)),
                          ReflectVector(np.ones(N)), tau_bar)


def test_sinr_hand_value():
    ch = scalar_channels()
    cfg = bare_config()
    f = PrimaryPrecoder.zeros(0, 1)
    assert sinr(ch, design([1.0], 0.5), f, 0, cfg) == pytest.approx(1 / 0.3)


def test_sinr_zero_signal():
    ch = scalar_channels()
    assert sinr(ch, design([0.0], 0.5), PrimaryPrecoder.zeros(0, 1), 0, bare_config()) == 0.0


def test_sinr_scale_invariant_without_noise(rng):
    ch = random_channels(rng)
    cfg = ScenarioConfig(M=3, L=3, N=4, sigma2=0.0, sigma2_c=0.0)
    f = PrimaryPrecoder(rng.standard_normal((2, 3)) + 0j)
    w = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    ups = np.exp(1j * rng.uniform(0, 6, 4))
    a = sinr_all(ch, w, np.array([0.4, 0.6]), ups, f, cfg)
    b = sinr_all(ch, 2 * w, np.array([0.4, 0.6]), ups, PrimaryPrecoder(2 * f.f), cfg)
    assert np.allclose(a, b)


def test_sinr_times_denominator_is_signal(rng):
    ch = random_channels(rng)
    cfg = ScenarioConfig(M=3, L=3, N=4)
    f = PrimaryPrecoder(rng.standard_normal((2, 3)) + 0j)
    w = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    ups = np.exp(1j * rng.uniform(0, 6, 4))
    rho = np.array([0.3, 0.7])
    s = sinr_all(ch, w, rho, ups, f, cfg)
    for k in range(2):
        # quadratic forms written out from scratch
        h = ch.h_d[k] + sum(ups[n] * ch.h_r[k, n] * np.conj(ch.H[n]) for n in range(4))
        sig = np.real(np.conj(h) @ np.outer(w[k], w[k].conj()) @ h)
        intf = sum(np.real(np.conj(h) @ np.outer(w[i], w[i].conj()) @ h) for i in range(2) if i != k)
        risi = sum(abs(np.vdot(ch.u_d[k], f.f[u])) ** 2 for u in range(2))
        den = intf + risi + cfg.sigma2 + cfg.sigma2_c / rho[k]
        assert s[k] * den == pytest.approx(sig, rel=1e-12)


@pytest.mark.parametrize("s, tb, r", [(1, 1, 1.0), (3, 0.5, 1.0), (0, 0.7, 0.0)])
def test_rate(s, tb, r):
    assert rate(s, tb) == pytest.approx(r)


def test_eh_curve_limits_and_inverse():
    assert eh_forward(0.0, EH) == pytest.approx(0.0, abs=1e-15)
    assert eh_saturation(EH) == pytest.approx(0.4836, abs=1e-4)
    assert eh_forward(1e12, EH) == pytest.approx(eh_saturation(EH), rel=1e-9)
    for x in (0.01, 0.1, 1.0):
        assert eh_inverse(eh_forward(x, EH), EH) == pytest.approx(x, rel=1e-10)
    with pytest.raises(SaturationExceeded):
        eh_inverse(eh_saturation(EH), EH)


def test_eh_increasing_and_concave():
    x = np.linspace(0, 5, 100)
    y = eh_forward(x, EH)
    d1 = np.diff(y)
    assert np.all(d1 > 0) and np.all(np.diff(d1) < 0)


@given(st.floats(0.0, 0.48))
def test_eh_round_trip(y):
    assert eh_forward(eh_inverse(y, EH), EH) == pytest.approx(y, abs=1e-12)


def test_eh_input_values():
    ch = scalar_channels(u=(1.0,))
    cfg = bare_config()
    off = PrimaryPrecoder.zeros(1, 1)
    assert received_eh_input(ch, design([1.0], 0.25), off, 0, cfg) == pytest.approx(0.75)
    assert received_eh_input(ch, design([1.0], 1.0), off, 0, cfg) == 0.0
    on = PrimaryPrecoder(np.array([[np.sqrt(0.1)]], complex))
    gain = received_eh_input(ch, design([1.0], 0.25), on, 0, cfg) - 0.75
    assert gain == pytest.approx(0.075)


def test_interference_scalar_values():
    ch = cascade(ChannelSet(h_d=np.ones((1, 1), complex), v_d=np.full((1, 1), 0.5 + 0j), g_d=np.ones((1, 1), complex),
                            u_d=np.zeros((1, 1), complex), h_r=np.ones((1, 1), complex), g_r=np.full((1, 1), 2.0 + 0j),
                            H=np.ones((1, 1), complex), G=np.full((1, 1), 3.0 + 0j)))
    cfg = bare_config(U=1, N=1)
    sol = design([2.0], 0.5, N=1)
    assert fisi(ch, sol, 0, cfg, tau_bar=0.5) == pytest.approx(0.5 * abs(0.5 * 2.0) ** 2)
    f = PrimaryPrecoder(np.array([[1.5]], complex))
    # ups^H G_u f with G_u = conj(g_r) G
    assert ciusi(ch, sol.upsilon, f, 0, cfg, tau_bar=0.5) == pytest.approx(0.5 * (2 * 3 * 1.5) ** 2)
    assert fisi(ch, design([0.0], 0.5, N=1), 0, cfg) == 0
    assert ciusi(ch, sol.upsilon, PrimaryPrecoder.zeros(1, 1), 0, cfg) == 0


@given(st.floats(0, 2 * np.pi))
def test_interference_phase_invariance(phi):
    rng = np.random.default_rng(5)
    ch = random_channels(rng)
    cfg = ScenarioConfig(M=3, L=3, N=4)
    f = PrimaryPrecoder(rng.standard_normal((2, 3)) + 0j)
    w = rng.standard_normal((2, 3)) + 0j
    ups = ReflectVector(np.exp(1j * rng.uniform(0, 6, 4)))
    rot = ReflectVector(ups.upsilon * np.exp(1j * phi))
    a = DesignSolution(w, np.array([0.5, 0.5]), ups, 1.0)
    b = DesignSolution(w * np.exp(1j * phi), np.array([0.5, 0.5]), ups, 1.0)
    assert fisi(ch, a, 1, cfg) == pytest.approx(fisi(ch, b, 1, cfg))
    assert ciusi(ch, ups, f, 0, cfg) == pytest.approx(ciusi(ch, rot, f, 0, cfg))


def test_zf_single_user_is_mrt():
    g = np.array([[1 + 1j, 2 - 1j, 0.5j]])
    ch = ChannelSet(h_d=np.zeros((1, 1)), v_d=np.zeros((1, 1)), g_d=g, u_d=np.zeros((1, 3)),
                    h_r=np.zeros((1, 0)), g_r=np.zeros((1, 0)), H=np.zeros((0, 1)), G=np.zeros((0, 3)))
    f = zf_primary_precoder(ch, ScenarioConfig(M=1, L=3, U=1, primary_power=2.0))
    expect = np.sqrt(2.0) * g[0] / np.linalg.norm(g[0])
    assert abs(abs(np.vdot(f.f[0], expect)) - 2.0) < 1e-12


def test_zf_nulls_cross_users(rng):
    ch = random_channels(rng, U=2, L=4)
    f = zf_primary_precoder(ch, ScenarioConfig(L=4, U=2))
    for j in range(2):
        for u in range(2):
            if j != u:
                assert abs(np.vdot(ch.g_d[j], f.f[u])) < 1e-8 * np.linalg.norm(ch.g_d[j]) * np.linalg.norm(f.f[u])
    assert np.sum(np.abs(f.f) ** 2) == pytest.approx(1.0)


def test_zf_orthogonal_channels_align():
    g = np.array([[1, 0, 0], [0, 1j, 0]], complex)
    ch = ChannelSet(h_d=np.zeros((1, 1)), v_d=np.zeros((2, 1)), g_d=g, u_d=np.zeros((1, 3)),
                    h_r=np.zeros((1, 0)), g_r=np.zeros((2, 0)), H=np.zeros((0, 1)), G=np.zeros((0, 3)))
    f = zf_primary_precoder(ch, ScenarioConfig(M=1, L=3, U=2))
    for u in range(2):
        assert abs(abs(np.vdot(g[u], f.f[u])) - np.linalg.norm(f.f[u])) < 1e-12


def test_zf_rank_deficient():
    g = np.array([[1, 2, 3], [2, 4, 6]], complex)
    ch = ChannelSet(h_d=np.zeros((1, 1)), v_d=np.zeros((2, 1)), g_d=g, u_d=np.zeros((1, 3)),
                    h_r=np.zeros((1, 0)), g_r=np.zeros((2, 0)), H=np.zeros((0, 1)), G=np.zeros((0, 3)))
    with pytest.raises(RankDeficient):
        zf_primary_precoder(ch, ScenarioConfig(M=1, L=3, U=2))


def test_feasibility_report_flags_bad_split():
    ch = scalar_channels()
    rep = check_feasibility(ch, design([1.0], 1.5), PrimaryPrecoder.zeros(0, 1), bare_config())
    assert rep.slacks["C5"][0] == pytest.approx(-0.5)
    assert "C5" in rep.violated()


def test_zero_threshold_always_met():
    ch = scalar_channels()
    rep = check_feasibility(ch, design([0.0], 0.5), PrimaryPrecoder.zeros(0, 1), bare_config(gamma=0.0))
    assert rep.slacks["C1"][0] >= 0


def test_reflect_vector_contract(rng):
    v = ReflectVector.random(6, rng)
    assert np.allclose(np.abs(v.upsilon), 1.0)
    assert np.allclose(ReflectVector.from_phases(v.phases).upsilon, v.upsilon)
    V = v.lifted(np.exp(0.7j))
    assert np.allclose(np.diag(V), 1.0)
    with pytest.raises(ValueError):
        ReflectVector(np.array([1.0, 0.5]))
