"""Spatially correlated Rician channels, cascades and CSI error injection."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import NonUnitModulus
from .scenario import Positions, ScenarioConfig

UNIT_TOL = 1e-9


def path_gain(cfg: ScenarioConfig, d, alpha, d0=1.0):
    return 10.0 ** (-cfg.c0_db / 10.0) * (np.asarray(d, float) / d0) ** (-alpha)


def exp_corr(n: int, r: float) -> np.ndarray:
    idx = np.arange(n)
    return float(r) ** np.abs(idx[:, None] - idx[None, :])


def psd_sqrt(R: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(R)
    return (U * np.sqrt(np.clip(lam, 0, None))) @ U.conj().T


def ula(n: int, phi: float) -> np.ndarray:
    """Half-wavelength ULA laid along the x axis."""
    return np.exp(1j * np.pi * np.arange(n) * np.cos(phi))


def ura(n: int, phi: float) -> np.ndarray:
    """N_h x N_v half-wavelength array in the vertical plane through the y axis.

    Nodes live in the horizontal plane, so only the horizontal index carries
    phase progression; the first n elements of the grid are used.
    """
    nh = max(1, math.ceil(math.sqrt(n)))
    nv = math.ceil(n / nh) if n else 0
    grid = np.kron(np.ones(nv), np.exp(1j * np.pi * np.arange(nh) * np.sin(phi)))
    return grid[:n]


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _angle(src, dst):
    d = np.asarray(dst, float) - np.asarray(src, float)
    return math.atan2(d[1], d[0]), float(np.hypot(*d))


@dataclass
class ChannelSet:
    h_d: np.ndarray  # (K, M)   ST -> SR_k, response h_d[k]^H w
    v_d: np.ndarray  # (U, M)   ST -> PR_u
    g_d: np.ndarray  # (U, L)   PT -> PR_u
    u_d: np.ndarray  # (K, L)   PT -> SR_k
    h_r: np.ndarray  # (K, N)   IRS -> SR_k
    g_r: np.ndarray  # (U, N)   IRS -> PR_u
    H: np.ndarray    # (N, M)   ST -> IRS
    G: np.ndarray    # (N, L)   PT -> IRS
    Hk: np.ndarray | None = None  # (K, N, M)
    Vu: np.ndarray | None = None  # (U, N, M)
    Gu: np.ndarray | None = None  # (U, N, L)
    Uk: np.ndarray | None = None  # (K, N, L)

    @property
    def dims(self):
        K, M = self.h_d.shape
        U, L = self.g_d.shape
        return dict(M=M, L=L, N=self.H.shape[0], K=K, U=U)

    def copy(self) -> "ChannelSet":
        return ChannelSet(**{k: None if v is None else v.copy() for k, v in self.__dict__.items()})

    def scaled(self, a: float) -> "ChannelSet":
        """Scale every receive-side channel by ``a`` (all received powers scale by a**2)."""
        out = self.copy()
        for name in ("h_d", "v_d", "g_d", "u_d", "h_r", "g_r", "Hk", "Vu", "Gu", "Uk"):
            val = getattr(out, name)
            if val is not None:
                setattr(out, name, val * a)
        return out

    def without_irs(self) -> "ChannelSet":
        out = self.copy()
        for name in ("h_r", "g_r", "H", "G", "Hk", "Vu", "Gu", "Uk"):
            val = getattr(out, name)
            if val is not None:
                setattr(out, name, np.zeros_like(val))
        return out


def synthesize(cfg: ScenarioConfig, pos: Positions, rng: np.random.Generator) -> ChannelSet:
    def vec(src, dst, n, array, alpha):
        phi, d = _angle(src, dst)
        los = array(n, phi)
        nlos = psd_sqrt(exp_corr(n, cfg.corr)) @ crandn(rng, n)
        k = cfg.kappa
        return np.sqrt(path_gain(cfg, d, alpha)) * (
            np.sqrt(k / (k + 1)) * los + np.sqrt(1 / (k + 1)) * nlos)

    def mat(src, dst, n_r, n_t, alpha):
        phi, d = _angle(src, dst)
        los = np.outer(ura(n_r, phi + np.pi), ula(n_t, phi).conj())
        nlos = psd_sqrt(exp_corr(n_r, cfg.corr)) @ crandn(rng, n_r, n_t) @ psd_sqrt(exp_corr(n_t, cfg.corr))
        v = cfg.varpi
        return np.sqrt(path_gain(cfg, d, alpha)) * (
            np.sqrt(v / (v + 1)) * los + np.sqrt(1 / (v + 1)) * nlos)

    M, L, N = cfg.M, cfg.L, cfg.N
    a_rx, a_irs = cfg.alpha_rx, cfg.alpha_irs
    stack = lambda rows, n: np.array(rows, dtype=complex).reshape(len(rows), n)
    ch = ChannelSet(
        h_d=stack([vec(pos.st, p, M, ula, a_rx) for p in pos.sr], M),
        v_d=stack([vec(pos.st, p, M, ula, a_rx) for p in pos.pr], M),
        g_d=stack([vec(pos.pt, p, L, ula, a_rx) for p in pos.pr], L),
        u_d=stack([vec(pos.pt, p, L, ula, a_rx) for p in pos.sr], L),
        h_r=stack([vec(pos.irs, p, N, ura, a_irs) for p in pos.sr], N),
        g_r=stack([vec(pos.irs, p, N, ura, a_irs) for p in pos.pr], N),
        H=mat(pos.st, pos.irs, N, M, a_irs).reshape(N, M),
        G=mat(pos.pt, pos.irs, N, L, a_irs).reshape(N, L),
    )
    return cascade(ch)


def cascade(ch: ChannelSet) -> ChannelSet:
    out = replace(ch)
    out.Hk = ch.h_r.conj()[:, :, None] * ch.H[None]
    out.Vu = ch.g_r.conj()[:, :, None] * ch.H[None]
    out.Gu = ch.g_r.conj()[:, :, None] * ch.G[None]
    out.Uk = ch.h_r.conj()[:, :, None] * ch.G[None]
    return out


def check_unit(upsilon, tol=UNIT_TOL):
    upsilon = np.asarray(upsilon)
    if upsilon.size and np.max(np.abs(np.abs(upsilon) - 1.0)) > tol:
        raise NonUnitModulus("reflect vector entries must have unit modulus")


@dataclass
class Effective:
    h: np.ndarray  # (K, M)  h_k = h_d + H_k^H ups
    v: np.ndarray  # (U, M)
    g: np.ndarray  # (U, L)
    u: np.ndarray  # (K, L)


def _eff(direct, casc, ups):
    if casc is None or casc.shape[1] == 0:
        return direct.copy()
    return direct + np.einsum("knm,n->km", casc.conj(), ups)


def effective(ch: ChannelSet, upsilon, check=True) -> Effective:
    ups = np.asarray(getattr(upsilon, "upsilon", upsilon), dtype=complex)
    if check:
        check_unit(ups)
    return Effective(_eff(ch.h_d, ch.Hk, ups), _eff(ch.v_d, ch.Vu, ups),
                     _eff(ch.g_d, ch.Gu, ups), _eff(ch.u_d, ch.Uk, ups))


# ---- statistical CSI errors -----------------------------------------------

@dataclass(frozen=True)
class CsiErrorModel:
    eps2_hd: np.ndarray
    eps2_Hk: np.ndarray
    eps2_vd: np.ndarray
    eps2_Vu: np.ndarray
    eps2_Gu: np.ndarray

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if np.any(np.asarray(val) < 0) or not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be finite and nonnegative")

    @classmethod
    def isotropic(cls, K, U, hd=0.0, Hk=0.0, vd=0.0, Vu=0.0, Gu=0.0):
        b = lambda x, n: np.broadcast_to(np.asarray(x, float), (n,)).copy()
        return cls(b(hd, K), b(Hk, K), b(vd, U), b(Vu, U), b(Gu, U))

    @classmethod
    def relative(cls, ch: ChannelSet, eps2: float):
        """Error variances set to ``eps2`` times the mean per-entry power of each family."""
        def per(x):
            if x is None or x.size == 0:
                return np.zeros(x.shape[0] if x is not None else 0)
            return eps2 * np.mean(np.abs(x.reshape(x.shape[0], -1)) ** 2, axis=1)
        return cls(per(ch.h_d), per(ch.Hk), per(ch.v_d), per(ch.Vu), per(ch.Gu))

    def scaled(self, a2: float) -> "CsiErrorModel":
        return CsiErrorModel(*(a2 * np.asarray(v) for v in self.__dict__.values()))

    def is_zero(self) -> bool:
        return all(not np.any(v) for v in self.__dict__.values())


def sample_errors(ch: ChannelSet, model: CsiErrorModel, rng, n=None):
    """Draw Δ for the five error-bearing families; a leading axis of size n if given."""
    lead = () if n is None else (n,)
    K, M = ch.h_d.shape
    U = ch.v_d.shape[0]
    N = ch.H.shape[0]
    L = ch.G.shape[1]
    sd = lambda e, extra: np.sqrt(np.asarray(e, float)).reshape((1,) * len(lead) + (-1,) + (1,) * extra)
    return dict(
        h_d=sd(model.eps2_hd, 1) * crandn(rng, *lead, K, M),
        Hk=sd(model.eps2_Hk, 2) * crandn(rng, *lead, K, N, M),
        v_d=sd(model.eps2_vd, 1) * crandn(rng, *lead, U, M),
        Vu=sd(model.eps2_Vu, 2) * crandn(rng, *lead, U, N, M),
        Gu=sd(model.eps2_Gu, 2) * crandn(rng, *lead, U, N, L),
    )


def inject_errors(true_set: ChannelSet, model: CsiErrorModel, rng):
    """Return (estimate, error) with truth = estimate + error exactly."""
    if true_set.Hk is None:
        true_set = cascade(true_set)
    delta = sample_errors(true_set, model, rng)
    est = true_set.copy()
    err = ChannelSet(**{k: None if v is None else np.zeros_like(v) for k, v in true_set.__dict__.items()})
    for name, d in delta.items():
        setattr(est, name, getattr(true_set, name) - d)
        setattr(err, name, d)
    return est, err


def add_errors(est: ChannelSet, delta: dict) -> ChannelSet:
    out = est.copy()
    for name, d in delta.items():
        setattr(out, name, getattr(est, name) + d)
    return out


# ---- dump format ------------------------------------------------------------

def dump_channels(ch: ChannelSet, path: str | Path, seed: int | None = None) -> None:
    """Text dump: a header line ``# irs-underlay channels seed=<s>`` then, per
    array, ``name rows cols`` followed by column-major ``re im`` pairs."""
    lines = [f"# irs-underlay channels seed={seed}"]
    for name, val in ch.__dict__.items():
        if val is None:
            continue
        lines.append(f"{name} {' '.join(map(str, val.shape))}")
        lines.extend(f"{z.real:.17g} {z.imag:.17g}" for z in val.ravel(order="F"))
    Path(path).write_text("\n".join(lines) + "\n")


def load_channels(path: str | Path) -> ChannelSet:
    it = iter(Path(path).read_text().splitlines())
    next(it)
    arrays = {}
    for line in it:
        name, *shape = line.split()
        shape = tuple(int(s) for s in shape)
        n = int(np.prod(shape))
        vals = np.array([complex(*map(float, next(it).split())) for _ in range(n)])
        arrays[name] = vals.reshape(shape, order="F")
    return ChannelSet(**arrays)
