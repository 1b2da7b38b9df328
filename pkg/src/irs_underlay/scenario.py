"""Scenario configuration, node placement and protocol overhead arithmetic."""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import BlockTooShort, ConfigError


def db2pow(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def pow2db(x):
    return 10.0 * np.log10(x)


def dbm2watt(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def watt2dbm(x):
    return 10.0 * np.log10(x) + 30.0


Point = tuple[float, float]

# per-receiver fields that accept a scalar (broadcast) or one value per receiver
_PER_SR = ("gamma", "r_min", "q_dc", "sigma2", "sigma2_c")
_PER_PR = ("e_iet",)


@dataclass(frozen=True)
class ScenarioConfig:
    M: int = 4
    L: int = 4
    N: int = 8
    K: int = 2
    U: int = 2
    # QoS and noise, linear units
    gamma: float | tuple = 1.0
    r_min: float | tuple | None = None
    q_dc: float | tuple = 1e-5
    e_iet: float | tuple = 1e-3
    e_ciusi: float = 1e-6
    sigma2: float | tuple = 1e-10
    sigma2_c: float | tuple = 1e-8
    eh_params: tuple = (2.463, 1.635, 0.826)
    # geometry (metres)
    st: Point = (0.0, 0.0)
    pt: Point = (0.0, -20.0)
    irs: Point = (5.0, 5.0)
    sr_center: Point = (5.0, 0.0)
    sr_radius: float = 2.0
    pr_center: Point = (5.0, -20.0)
    pr_radius: float = 2.0
    # large-scale fading: C0 is the loss at d0 = 1 m in dB
    c0_db: float = 30.0
    alpha_irs: float = 2.2
    alpha_rx: float = 3.6
    kappa: float = float(db2pow(5.0))
    varpi: float = float(db2pow(5.0))
    corr: float = 0.0
    # protocol block
    T: int = 1000
    tau_s_override: int | None = None
    discrete_levels: int | None = None
    primary_power: float = 1.0
    # model variants
    risi_effective: bool = False
    fisi_cascaded: bool = False
    # robust design
    eps2: float = 0.0
    outage: float = 0.05
    omega_r: float = 0.015
    omega_e: float = 1.0

    def __post_init__(self):
        for name in ("M", "L", "K"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("N", "U"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.U > self.L:
            raise ConfigError("U must not exceed L")
        for name in _PER_SR:
            val = getattr(self, name)
            if val is not None and np.ndim(val) > 0 and len(val) not in (1, self.K):
                raise ConfigError(f"{name} needs 1 or K={self.K} entries")
        for name in _PER_PR:
            val = getattr(self, name)
            if np.ndim(val) > 0 and len(val) not in (1, self.U):
                raise ConfigError(f"{name} needs 1 or U={self.U} entries")
        if np.any(self.gammas() < 0):
            raise ConfigError("gamma must be nonnegative")
        if np.any(self.sinr_noise() < 0) or np.any(self._per("q_dc", self.K) < 0):
            raise ConfigError("noise powers and harvesting targets must be nonnegative")
        a, b, c = self.eh_params
        if np.any(self._per("q_dc", self.K) >= a - b / c):
            raise ConfigError("q_dc must stay below the EH saturation level")
        if self.sr_radius < 0 or self.pr_radius < 0:
            raise ConfigError("cluster radii must be nonnegative")
        if self.T < 1 or self.primary_power < 0:
            raise ConfigError("T and primary_power must be positive")
        if not 0 < self.outage <= 1:
            raise ConfigError("outage must lie in (0, 1]")

    def _per(self, name, n):
        val = getattr(self, name)
        arr = np.atleast_1d(np.asarray(val, dtype=float))
        return np.broadcast_to(arr, (n,)).copy() if n else np.zeros(0)

    def gammas(self, tau_bar: float | None = None) -> np.ndarray:
        """SINR thresholds; a rate target, when given, overrides gamma."""
        if self.r_min is not None:
            tb = compute_overhead(self).tau_bar if tau_bar is None else tau_bar
            return sinr_threshold_from_rate(self._per("r_min", self.K), tb)
        return self._per("gamma", self.K)

    def q_targets(self) -> np.ndarray:
        return self._per("q_dc", self.K)

    def fisi_limits(self) -> np.ndarray:
        return self._per("e_iet", self.U)

    def sinr_noise(self) -> np.ndarray:
        return self._per("sigma2", self.K)

    def conv_noise(self) -> np.ndarray:
        return self._per("sigma2_c", self.K)

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class OverheadBudget:
    tau_h: int
    tau_v: int
    tau_g: int
    tau_u: int
    tau_p: int
    tau_s: int
    tau: int
    tau_bar: float


def compute_overhead(cfg: ScenarioConfig) -> OverheadBudget:
    M, L, N, K, U = cfg.M, cfg.L, cfg.N, cfg.K, cfg.U
    tau_h = K + N + math.ceil((K - 1) * N / M)
    tau_v = U + N + math.ceil(max(U - 1, 0) * N / M)
    tau_g = U + N + math.ceil(max(U - 1, 0) * N / L)
    tau_u = K + N + math.ceil((K - 1) * N / L)
    tau_p = max(tau_h, tau_v, tau_g, tau_u)
    tau_s = K + U + 1 if cfg.tau_s_override is None else int(cfg.tau_s_override)
    tau = tau_p + tau_s
    if cfg.T <= tau:
        raise BlockTooShort(f"T={cfg.T} leaves no data symbols after {tau} overhead symbols")
    return OverheadBudget(tau_h, tau_v, tau_g, tau_u, tau_p, tau_s, tau, (cfg.T - tau) / cfg.T)


def sinr_threshold_from_rate(r_min, tau_bar):
    r_min = np.asarray(r_min, dtype=float)
    if np.any(r_min < 0) or not 0 < tau_bar <= 1:
        raise ValueError("need r_min >= 0 and 0 < tau_bar <= 1")
    return 2.0 ** (r_min / tau_bar) - 1.0


@dataclass(frozen=True)
class Positions:
    st: np.ndarray
    pt: np.ndarray
    irs: np.ndarray
    sr: np.ndarray  # (K, 2)
    pr: np.ndarray  # (U, 2)


def place_nodes(cfg: ScenarioConfig, rng: np.random.Generator) -> Positions:
    def ring(center, radius, n):
        ang = rng.uniform(0.0, 2 * np.pi, size=n)
        return np.asarray(center, float) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)

    sr = ring(cfg.sr_center, cfg.sr_radius, cfg.K)
    pr = ring(cfg.pr_center, cfg.pr_radius, cfg.U)
    return Positions(np.asarray(cfg.st, float), np.asarray(cfg.pt, float),
                     np.asarray(cfg.irs, float), sr.reshape(cfg.K, 2), pr.reshape(cfg.U, 2))


# ---- config files ---------------------------------------------------------

# suffix -> (converter); the suffix is stripped from the key
_UNIT_SUFFIX = {"_dbm": dbm2watt, "_db": db2pow}
# keys whose dB form means "keep in dB" (stored as dB in the config)
_DB_NATIVE = {"c0_db"}


def _convert(val, fn):
    if isinstance(val, (list, tuple)):
        return tuple(float(fn(v)) for v in val)
    return float(fn(val))


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if "," in text:
            return tuple(_parse_value(p) for p in text.split(","))
        return text


def parse_key_values(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = _parse_value(val)
    return out


def config_from_dict(d: dict, base: ScenarioConfig | None = None) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    kw = {}
    for key, val in d.items():
        name = key
        if key not in _DB_NATIVE:
            for suf, fn in _UNIT_SUFFIX.items():
                if key.endswith(suf):
                    name = key[: -len(suf)]
                    val = _convert(val, fn)
                    break
        if name not in known:
            raise ConfigError(f"unknown config key '{key}'")
        if isinstance(val, list):
            val = tuple(val)
        kw[name] = val
    for name in ("M", "L", "N", "K", "U", "T"):
        if name in kw:
            kw[name] = int(kw[name])
    return replace(base or ScenarioConfig(), **kw)


def load_config(path: str | Path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    return config_from_dict(parse_key_values(Path(path).read_text()), base)


def full_config(**kw) -> ScenarioConfig:
    """Full-size setting of the numerical study (8 ST/PT antennas, 64 elements)."""
    return replace(ScenarioConfig(M=8, L=8, N=64, e_iet=1e-3), **kw)


def desk_config(**kw) -> ScenarioConfig:
    """Reduced setting used by the test-suite and default sweeps.

    The interference cap is tightened to -55 dBm: at 1 mW the cap never
    binds at this geometry and the underlay problem degenerates into the
    isolated one.
    """
    base = replace(ScenarioConfig(), e_iet=float(dbm2watt(-55.0)))
    return replace(base, **kw)
