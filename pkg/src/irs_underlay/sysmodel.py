"""Physical quantities of the underlay link: SINR, harvesting, interference."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, Effective, check_unit, effective
from .errors import RankDeficient, SaturationExceeded
from .scenario import ScenarioConfig, compute_overhead


# ---- value types ----------------------------------------------------------

@dataclass(frozen=True)
class ReflectVector:
    upsilon: np.ndarray

    def __post_init__(self):
        ups = np.asarray(self.upsilon, dtype=complex).ravel()
        check_unit(ups)
        object.__setattr__(self, "upsilon", ups)

    @classmethod
    def from_phases(cls, theta) -> "ReflectVector":
        return cls(np.exp(1j * np.asarray(theta, dtype=float)))

    @classmethod
    def random(cls, n: int, rng) -> "ReflectVector":
        return cls.from_phases(rng.uniform(0, 2 * np.pi, n))

    @classmethod
    def normalized(cls, z) -> "ReflectVector":
        z = np.asarray(z, dtype=complex)
        safe = np.where(np.abs(z) > 0, z, 1.0)
        return cls(safe / np.abs(safe))

    @property
    def phases(self) -> np.ndarray:
        return np.mod(np.angle(self.upsilon), 2 * np.pi)

    @property
    def N(self) -> int:
        return self.upsilon.size

    def lifted(self, x: complex = 1.0) -> np.ndarray:
        vb = np.append(self.upsilon, x)
        return np.outer(vb, vb.conj())


@dataclass(frozen=True)
class PrimaryPrecoder:
    f: np.ndarray  # (U, L)

    @property
    def Fbar(self) -> np.ndarray:
        return self.f.T @ self.f.conj()

    @classmethod
    def zeros(cls, U: int, L: int) -> "PrimaryPrecoder":
        return cls(np.zeros((U, L), dtype=complex))


@dataclass
class FeasibilityReport:
    slacks: dict  # constraint name -> array of signed relative slacks

    def worst(self) -> float:
        vals = [np.min(v) for v in self.slacks.values() if np.size(v)]
        return float(min(vals)) if vals else np.inf

    def ok(self, tol: float = 1e-6) -> bool:
        return self.worst() >= -tol

    def violated(self, tol: float = 1e-6) -> list:
        return [k for k, v in self.slacks.items() if np.size(v) and np.min(v) < -tol]


@dataclass
class DesignSolution:
    w: np.ndarray  # (K, M)
    rho: np.ndarray  # (K,)
    upsilon: ReflectVector
    tau_bar: float
    trace: list = field(default_factory=list)
    feasibility: FeasibilityReport | None = None
    outer_iters: int = 0
    inner_iters: int = 0
    rank_residual: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2))

    @property
    def objective(self) -> float:
        return self.tau_bar * self.power


# ---- EH curve -------------------------------------------------------------

def eh_saturation(params) -> float:
    a, b, c = params
    return a - b / c


def eh_forward(x, params):
    a, b, c = params
    x = np.asarray(x, dtype=float)
    return (a * x + b) / (x + c) - b / c


def eh_inverse(y, params):
    a, b, c = params
    y = np.asarray(y, dtype=float)
    sat = eh_saturation(params)
    if np.any(y >= sat):
        raise SaturationExceeded(f"DC target must be below {sat:.4f}")
    return c * y / (sat - y)


# ---- primary precoder -----------------------------------------------------

def zf_primary_precoder(ch: ChannelSet, cfg: ScenarioConfig, tol: float = 1e-10) -> PrimaryPrecoder:
    U, L = ch.g_d.shape
    if U == 0:
        return PrimaryPrecoder.zeros(0, L)
    A = ch.g_d.conj()  # row u is g_d[u]^H
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= tol * s[0]:
        raise RankDeficient("direct PT->PR channels are rank deficient")
    F = np.linalg.pinv(A)  # (L, U), A F = I
    F = F / np.linalg.norm(F, axis=0, keepdims=True) * np.sqrt(cfg.primary_power / U)
    return PrimaryPrecoder(F.T.copy())


# ---- evaluators -----------------------------------------------------------

def couplings(eff_h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Matrix C[k, i] = h_k^H w_i."""
    return eff_h.conj() @ w.T


def risi(ch: ChannelSet, f: PrimaryPrecoder, eff: Effective | None = None, use_effective=False):
    """Reverse interference power at each SR."""
    if f.f.size == 0:
        return np.zeros(ch.h_d.shape[0])
    u = eff.u if (use_effective and eff is not None) else ch.u_d
    return np.sum(np.abs(u.conj() @ f.f.T) ** 2, axis=1)


def _unpack(sol_or_w, rho=None, ups=None):
    if isinstance(sol_or_w, DesignSolution):
        return sol_or_w.w, sol_or_w.rho, sol_or_w.upsilon
    return np.asarray(sol_or_w), np.asarray(rho), ups


def sinr_all(ch, w, rho, ups, f, cfg: ScenarioConfig, check=True):
    eff = effective(ch, ups, check=check)
    C = np.abs(couplings(eff.h, w)) ** 2
    sig = np.diag(C)
    intf = C.sum(axis=1) - sig
    I_r = risi(ch, f, eff, cfg.risi_effective)
    with np.errstate(divide="ignore"):
        conv = np.where(rho > 0, cfg.conv_noise() / np.where(rho > 0, rho, 1), np.inf)
    den = intf + I_r + cfg.sinr_noise() + conv
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sig > 0, sig / den, 0.0)
    return out


def sinr(ch, sol, f, k, cfg):
    w, rho, ups = _unpack(sol)
    return float(sinr_all(ch, w, rho, ups, f, cfg)[k])


def rate(sinr_val, tau_bar):
    return tau_bar * np.log2(1.0 + np.asarray(sinr_val, dtype=float))


def eh_input_all(ch, w, rho, ups, f, cfg: ScenarioConfig, check=True):
    eff = effective(ch, ups, check=check)
    P_r = np.sum(np.abs(couplings(eff.h, w)) ** 2, axis=1) + risi(ch, f, eff, cfg.risi_effective)
    return (1.0 - np.asarray(rho)) * P_r


def received_eh_input(ch, sol, f, k, cfg):
    w, rho, ups = _unpack(sol)
    return float(eh_input_all(ch, w, rho, ups, f, cfg)[k])


def fisi_power(ch, w, ups, cfg: ScenarioConfig):
    v = effective(ch, ups).v if cfg.fisi_cascaded else ch.v_d
    return np.sum(np.abs(v.conj() @ np.asarray(w).T) ** 2, axis=1)


def ciusi_power(ch, ups, f: PrimaryPrecoder):
    ups = np.asarray(getattr(ups, "upsilon", ups))
    if f.f.size == 0 or ups.size == 0:
        return np.zeros(ch.g_d.shape[0])
    # upsilon^H G_u f_j for every (u, j)
    val = np.einsum("n,unl,jl->uj", ups.conj(), ch.Gu, f.f)
    return np.sum(np.abs(val) ** 2, axis=1)


def fisi(ch, sol, u, cfg, tau_bar=None):
    w, _, ups = _unpack(sol)
    tb = compute_overhead(cfg).tau_bar if tau_bar is None else tau_bar
    return float(tb * fisi_power(ch, w, ups, cfg)[u])


def ciusi(ch, ups, f, u, cfg, tau_bar=None):
    tb = compute_overhead(cfg).tau_bar if tau_bar is None else tau_bar
    return float(tb * ciusi_power(ch, ups, f)[u])


# ---- thresholds -----------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    """Power-domain constraint constants used by every solver."""
    gamma: np.ndarray     # (K,)
    q_rf: np.ndarray      # (K,) required (1-rho) P_r, i.e. Q_k / tau_bar
    fisi: np.ndarray      # (U,) FISI power caps (inf = inactive)
    ciusi: float          # CIUSI power cap
    sigma2: np.ndarray
    sigma2_c: np.ndarray
    tau_bar: float


def thresholds(cfg: ScenarioConfig, tau_bar: float | None = None) -> Thresholds:
    tb = compute_overhead(cfg).tau_bar if tau_bar is None else tau_bar
    q = eh_inverse(cfg.q_targets(), cfg.eh_params) / tb
    return Thresholds(cfg.gammas(tb), q, cfg.fisi_limits(), float(cfg.e_ciusi),
                      cfg.sinr_noise(), cfg.conv_noise(), tb)


def check_feasibility(ch, sol, f, cfg: ScenarioConfig, tau_bar=None) -> FeasibilityReport:
    """Signed relative slack of C1..C6; negative means violated."""
    w, rho, ups = _unpack(sol)
    ups = np.asarray(getattr(ups, "upsilon", ups), dtype=complex)
    th = thresholds(cfg, tau_bar)
    slacks = {}
    unit_dev = np.abs(np.abs(ups) - 1.0)
    slacks["C6"] = -unit_dev if ups.size else np.zeros(0)
    slacks["C5"] = np.minimum(rho, 1.0 - rho)
    safe_ups = ReflectVector.normalized(ups).upsilon if ups.size else ups
    rho_c = np.clip(rho, 0.0, 1.0)
    s = sinr_all(ch, w, rho_c, safe_ups, f, cfg)
    slacks["C1"] = np.where(th.gamma > 0, (s - th.gamma) / np.where(th.gamma > 0, th.gamma, 1), 1.0)
    e = eh_input_all(ch, w, rho_c, safe_ups, f, cfg)
    slacks["C2"] = np.where(th.q_rf > 0, (e - th.q_rf) / np.where(th.q_rf > 0, th.q_rf, 1), 1.0)
    fp = fisi_power(ch, w, safe_ups, cfg)
    with np.errstate(invalid="ignore", divide="ignore"):
        slacks["C3"] = np.where(np.isfinite(th.fisi), (th.fisi - fp) / th.fisi, 1.0)
    cp = ciusi_power(ch, safe_ups, f)
    slacks["C4"] = (th.ciusi - cp) / th.ciusi if np.isfinite(th.ciusi) else np.ones_like(cp)
    return FeasibilityReport(slacks)
