import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irs_underlay.errors import BlockTooShort, ConfigError
from irs_underlay.scenario import (ScenarioConfig, compute_overhead, config_from_dict, dbm2watt,
                                   load_config, full_config, place_nodes, sinr_threshold_from_rate,
                                   watt2dbm)


def test_single_user_training_length():
    ob = compute_overhead(ScenarioConfig(M=4, N=8, K=1, U=1, L=4))
    assert ob.tau_h == 9


def test_overhead_full_size_hand_values():
    ob = compute_overhead(ScenarioConfig(M=8, L=8, N=64, K=2, U=2, T=1000))
    assert (ob.tau_h, ob.tau_v, ob.tau_g, ob.tau_u) == (74, 74, 74, 74)
    assert ob.tau_p == 74 and ob.tau_s == 5 and ob.tau == 79
    assert ob.tau_bar == pytest.approx(0.921)


def test_block_too_short():
    with pytest.raises(BlockTooShort):
        compute_overhead(ScenarioConfig(M=8, L=8, N=64, K=2, U=2, T=79))


def test_sharing_slots_override():
    ob = compute_overhead(ScenarioConfig(tau_s_override=0))
    assert ob.tau == ob.tau_p


@pytest.mark.parametrize("r, tb, expect", [(1, 1, 1.0), (1, 0.5, 3.0), (0, 0.3, 0.0)])
def test_threshold_from_rate(r, tb, expect):
    assert sinr_threshold_from_rate(r, tb) == pytest.approx(expect)


def test_threshold_from_rate_rejects_bad_fraction():
    with pytest.raises(ValueError):
        sinr_threshold_from_rate(1.0, 0.0)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 64), st.integers(1, 4), st.integers(0, 4))
def test_training_length_monotone_in_n_and_k(M, L, N, K, U):
    U = min(U, L)
    base = compute_overhead(ScenarioConfig(M=M, L=L, N=N, K=K, U=U, T=10**6))
    more_n = compute_overhead(ScenarioConfig(M=M, L=L, N=N + 1, K=K, U=U, T=10**6))
    more_k = compute_overhead(ScenarioConfig(M=M, L=L, N=N, K=K + 1, U=U, T=10**6))
    assert more_n.tau_p >= base.tau_p and more_k.tau_p >= base.tau_p
    assert more_n.tau_bar < base.tau_bar


@given(st.floats(0.01, 5), st.floats(0.05, 1.0), st.floats(0.01, 1.0))
def test_threshold_monotonicity(r, tb, dr):
    g = sinr_threshold_from_rate(r, tb)
    assert sinr_threshold_from_rate(r + dr, tb) > g
    if tb < 1:
        assert sinr_threshold_from_rate(r, min(1.0, tb * 1.1)) < g


def test_full_scale_geometry(rng):
    cfg = full_config()
    pos = place_nodes(cfg, rng)
    assert tuple(pos.st) == (0, 0) and tuple(pos.pt) == (0, -20) and tuple(pos.irs) == (5, 5)
    assert np.allclose(np.linalg.norm(pos.sr - [5, 0], axis=1), 2.0)
    assert np.allclose(np.linalg.norm(pos.pr - [5, -20], axis=1), 2.0)


def test_zero_radius_collapses_cluster(rng):
    pos = place_nodes(ScenarioConfig(sr_radius=0.0), rng)
    assert np.allclose(pos.sr, [5.0, 0.0])


def test_placement_deterministic():
    cfg = ScenarioConfig()
    a = place_nodes(cfg, np.random.default_rng(3))
    b = place_nodes(cfg, np.random.default_rng(3))
    assert np.array_equal(a.sr, b.sr) and np.array_equal(a.pr, b.pr)


def test_dbm_round_trip():
    assert dbm2watt(30.0) == pytest.approx(1.0)
    assert watt2dbm(dbm2watt(-55.0)) == pytest.approx(-55.0)


def test_config_file_converts_units(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("N = 16  # elements\ngamma_db = 10\nq_dc_dbm = -20\ne_iet_dbm = -60, -50\nc0_db = 30\n")
    cfg = load_config(p)
    assert cfg.N == 16
    assert cfg.gamma == pytest.approx(10.0)
    assert cfg.q_dc == pytest.approx(1e-5)
    assert cfg.fisi_limits() == pytest.approx([1e-9, 1e-8])
    assert cfg.c0_db == 30


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})


def test_config_rejects_saturated_target():
    a, b, c = ScenarioConfig().eh_params
    with pytest.raises(ConfigError):
        ScenarioConfig(q_dc=a - b / c)


def test_rate_target_overrides_gamma():
    cfg = ScenarioConfig(r_min=1.0)
    tb = compute_overhead(cfg).tau_bar
    assert cfg.gammas() == pytest.approx(2 ** (1 / tb) - 1)
    assert math.isclose(cfg.gammas(1.0)[0], 1.0)
