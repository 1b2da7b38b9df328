import numpy as np
import pytest

from irs_underlay.channel import ChannelSet, cascade, crandn
from irs_underlay.harness import make_instance
from irs_underlay.scenario import ScenarioConfig, desk_config


def random_channels(rng, K=2, U=2, M=3, L=3, N=4, scale=1.0) -> ChannelSet:
    """Unstructured i.i.d. channels with cascades filled in."""
    ch = ChannelSet(
        h_d=scale * crandn(rng, K, M), v_d=scale * crandn(rng, U, M),
        g_d=crandn(rng, U, L), u_d=scale * crandn(rng, K, L),
        h_r=crandn(rng, K, N), g_r=crandn(rng, U, N),
        H=scale * crandn(rng, N, M), G=crandn(rng, N, L))
    return cascade(ch)


def bare_config(**kw) -> ScenarioConfig:
    """Unit-noise config for hand-built channels: tau_bar is close to one."""
    base = dict(M=1, L=1, N=0, K=1, U=0, gamma=1.0, q_dc=0.0, sigma2=0.1, sigma2_c=0.1,
                e_iet=np.inf, e_ciusi=np.inf, T=10**9)
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk():
    return desk_config()


@pytest.fixture(scope="session")
def desk_instance(desk):
    ch, f = make_instance(desk, 7)
    return ch, f
