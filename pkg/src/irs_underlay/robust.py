"""Outage-constrained design under Gaussian CSI errors.

Every probabilistic constraint is a quadratic form in a standard complex
Gaussian vector i,

    i^H E i + 2 Re(e^H i) + c  >= 0   (or <= 0),

and is replaced by the Bernstein-type inequality (BTI) restriction

    Tr E - sqrt(2 ln(1/p)) x - ln(1/p) y + c >= 0,
    ||[vec E; sqrt(2) e]|| <= x,   y I + E >= 0,   y >= 0,

which guarantees the event with probability at least 1 - p.  The <= case is
the same triple applied to the negated form.  With isotropic errors the
M-dimensional effective-channel error of SR k has covariance
(eps_hd^2 + N eps_H^2) I, so E and e collapse to scaled copies of the
deterministic quadratic.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .am import CAP_BACKOFF, _require, _ups, am_solve, extract_beamformer, rank_ratio
from .channel import ChannelSet, CsiErrorModel, effective, sample_errors
from .conic import Model, vstack
from .errors import CcpStalled, Infeasible, NotRankOne, SubproblemInfeasible
from .instance import Instance, build_instance, power_scaled
from .scenario import ScenarioConfig
from .sysmodel import (DesignSolution, PrimaryPrecoder, ReflectVector, check_feasibility,
                       risi, thresholds)

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class OutageSpec:
    """Maximum tolerable outage per constraint family."""
    p: np.ndarray        # SINR, per SR
    q: np.ndarray        # harvesting, per SR
    varsigma: np.ndarray  # forward interference, per PR
    varrho: np.ndarray   # cascaded interference, per PR

    def __post_init__(self):
        for name in ("p", "q", "varsigma", "varrho"):
            val = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(val <= 0) or np.any(val > 1):
                raise ValueError(f"{name}: outage probabilities must lie in (0, 1]")
            object.__setattr__(self, name, val)

    @classmethod
    def uniform(cls, K: int, U: int, value: float = 0.05) -> "OutageSpec":
        return cls(np.full(K, value), np.full(K, value), np.full(U, value), np.full(U, value))


def ps_ratio(gamma, q, omega_r=0.015, omega_e=1.0):
    """Fixed PS ratio sqrt(wR G) / (sqrt(wR G) + sqrt(wE Q))."""
    if not (0 < omega_r <= 1 and 0 < omega_e <= 1):
        raise ValueError("weights must lie in (0, 1]")
    a = np.sqrt(omega_r * np.asarray(gamma, dtype=float))
    b = np.sqrt(omega_e * np.asarray(q, dtype=float))
    with np.errstate(invalid="ignore"):
        return np.where(a + b > 0, a / np.where(a + b > 0, a + b, 1.0), 0.5)


def fixed_ps_ratios(cfg: ScenarioConfig, omega_r=0.015, omega_e=1.0, tau_bar=None):
    """PS ratios from the SINR targets and the DC harvesting targets in mW."""
    th = thresholds(cfg, tau_bar)
    return ps_ratio(th.gamma, 1e3 * cfg.q_targets(), omega_r, omega_e)


# ---- BTI numerics --------------------------------------------------------

def _log_terms(p):
    lp = np.log(1.0 / p)
    return np.sqrt(2.0 * lp), lp


def bti_margin(E, e, c, p, sense="ge"):
    """Minimal certificate (x, y) and the resulting slack of one BTI triple.

    A nonnegative slack certifies Pr(event) >= 1 - p.
    """
    E = np.atleast_2d(np.asarray(E, dtype=complex))
    e = np.atleast_1d(np.asarray(e, dtype=complex))
    a, b = _log_terms(p)
    x = float(np.sqrt(np.sum(np.abs(E) ** 2) + 2 * np.sum(np.abs(e) ** 2)))
    lam = np.linalg.eigvalsh(0.5 * (E + E.conj().T)) if E.size else np.zeros(1)
    tr = float(np.trace(E).real)
    if sense == "ge":
        y = max(0.0, -lam.min())
        slack = tr - a * x - b * y + c
    else:
        y = max(0.0, lam.max())
        slack = -(tr + a * x + b * y + c)
    return x, y, float(slack)


def tail_probability(E, e, c, sense="ge", n=100_000, rng=None):
    """Monte-Carlo estimate of Pr(event fails) for the quadratic form."""
    rng = np.random.default_rng(0) if rng is None else rng
    E = np.atleast_2d(np.asarray(E, dtype=complex))
    e = np.atleast_1d(np.asarray(e, dtype=complex))
    d = E.shape[0]
    i = (rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))) / SQRT2
    val = np.einsum("si,ij,sj->s", i.conj(), E, i).real + 2 * (i @ e.conj()).real + c
    return float(np.mean(val < 0) if sense == "ge" else np.mean(val > 0))


@dataclass
class BtiCertificate:
    """Per-family certificates of a design: x, y, slack and PSD-shift minimum."""
    blocks: dict = field(default_factory=dict)  # name -> dict(x, y, slack, psd_min)

    def add(self, name, x, y, slack, psd_min):
        b = self.blocks.setdefault(name, dict(x=[], y=[], slack=[], psd_min=[]))
        b["x"].append(x)
        b["y"].append(y)
        b["slack"].append(slack)
        b["psd_min"].append(psd_min)

    def worst_slack(self) -> float:
        vals = [min(b["slack"]) for b in self.blocks.values() if b["slack"]]
        return float(min(vals)) if vals else np.inf

    def worst_psd(self) -> float:
        vals = [min(b["psd_min"]) for b in self.blocks.values() if b["psd_min"]]
        return float(min(vals)) if vals else np.inf


# ---- error geometry ------------------------------------------------------

def _casc_map(ups, M):
    """T with T @ conj(vec(dH)) = dH^H ups for an (N, M) error dH (row-major vec)."""
    N = ups.size
    T = np.zeros((M, N * M), dtype=complex)
    for n in range(N):
        T[:, n * M:(n + 1) * M] = ups[n] * np.eye(M)
    return T


def error_factor(e_direct, e_casc, ups, M, cascaded=True):
    """A with effective-channel error A @ i, i ~ CN(0, I), under isotropic variances."""
    blocks = [np.sqrt(e_direct) * np.eye(M)]
    if cascaded and ups.size:
        blocks.append(np.sqrt(e_casc) * _casc_map(ups, M))
    return np.hstack(blocks)


def _iso_var(e_direct, e_casc, ups, cascaded=True):
    return float(e_direct + (e_casc * float(np.sum(np.abs(ups) ** 2)) if cascaded else 0.0))


# ---- robust beamforming SDP ---------------------------------------------

def _emit_bti(m, E, e, c, p, sense, margin=0.0, scale=1.0):
    """Add one BTI triple divided through by ``scale``; E and e may be affine or constant.

    The triple is homogeneous in (E, e, c, x, y), so the division only
    conditions the row; ``margin`` is added after it.  Returns (x, y).
    """
    E, e, c = E / scale, e / scale, c / scale
    a, b = _log_terms(p)
    x = m.real()
    m.add_soc(x, vstack([E.ravel() if hasattr(E, "coef") else np.ravel(E), SQRT2 * e]))
    n = E.shape[0]
    if hasattr(E, "coef"):
        y = m.nonneg()
        m.add_psd(y * np.eye(n) + (E if sense == "ge" else -E))
        tr = E.trace().real
    else:
        lam = np.linalg.eigvalsh(E)
        y = max(0.0, -lam.min()) if sense == "ge" else max(0.0, lam.max())
        tr = float(np.trace(E).real)
    if sense == "ge":
        m.add_ge(tr - a * x - b * y + c, margin)
    else:
        m.add_le(tr + a * x + b * y + c, -margin)
    return x, y


def _sinr_B(W, k, gamma):
    return W[k] - gamma * sum((W[i] for i in range(len(W)) if i != k), 0.0)


def p18(inst: Instance, ups, rho, spec: OutageSpec, errs: CsiErrorModel, anchors=None,
        delta=10.0, general=False):
    """Robust beamforming SDP (see :func:`_p18`) solved in a well-scaled power unit."""
    return power_scaled(inst, lambda sub, e: (_p18(sub, ups, rho, spec, e, anchors, delta, general),),
                        errs)[0]


def _p18(inst: Instance, ups, rho, spec: OutageSpec, errs: CsiErrorModel, anchors=None,
         delta=10.0, general=False):
    """Robust beamforming SDP at a fixed reflect vector and PS ratios.

    ``anchors`` are principal eigenvectors of the previous iterate; with them
    the objective carries delta * (Tr W_k - l_k^H W_k l_k), a convex upper
    bound of the gap between nuclear and spectral norm.  ``general`` builds
    E and e from the full error factor instead of the isotropic collapse.
    """
    d = inst.dims
    K, M, U = d["K"], d["M"], d["U"]
    th = inst.th
    h = inst.eff(ups).h
    I_r = inst.risi(ups)
    m = Model()
    W = [m.hermitian(M) for _ in range(K)]
    for Wk in W:
        m.add_psd(Wk)
    total = sum(W[1:], W[0]) if K else None

    def block(B, hh, A, s, c, p, sense, scale):
        if s == 0:
            if sense == "ge":
                m.add_ge(c / scale)
            else:
                m.add_le(c / scale)
            return
        if general:
            E = (A.conj().T @ B) @ A
            e = A.conj().T @ (B @ hh)
        else:
            E, e = s * B, np.sqrt(s) * (B @ hh)
        _emit_bti(m, E, e, c, p, sense, scale=scale)

    for k in range(K):
        A = error_factor(errs.eps2_hd[k], errs.eps2_Hk[k], ups, M) if general else None
        s = _iso_var(errs.eps2_hd[k], errs.eps2_Hk[k], ups)
        Hh = np.outer(h[k], h[k].conj())
        if th.gamma[k] > 0:
            B = _sinr_B(W, k, th.gamma[k])
            noise = th.gamma[k] * (I_r[k] + th.sigma2[k] + th.sigma2_c[k] / rho[k])
            block(B, h[k], A, s, B.inner(Hh).real - noise, spec.p[k], "ge", noise)
        if th.q_rf[k] > 0:
            need = th.q_rf[k] / (1.0 - rho[k])
            block(total, h[k], A, s, total.inner(Hh).real + I_r[k] - need, spec.q[k], "ge", need)
    v = inst.fisi_channel(ups)
    casc = inst.cfg.fisi_cascaded
    for u in range(U):
        if np.isfinite(th.fisi[u]):
            A = error_factor(errs.eps2_vd[u], errs.eps2_Vu[u], ups, M, casc) if general else None
            s = _iso_var(errs.eps2_vd[u], errs.eps2_Vu[u], ups, casc)
            c = total.inner(np.outer(v[u], v[u].conj())).real - (1.0 - CAP_BACKOFF) * th.fisi[u]
            block(total, v[u], A, s, c, spec.varsigma[u], "le", th.fisi[u])
    obj = sum(Wk.trace().real for Wk in W)
    if anchors is not None and delta > 0:
        obj = obj + delta * sum(Wk.trace().real - Wk.inner(np.outer(l, l.conj())).real
                                for Wk, l in zip(W, anchors))
    m.minimize(obj)
    _require(m, "robust beamforming SDP")
    Wv = np.array([m.value(Wk) for Wk in W]).reshape(K, M, M)
    return 0.5 * (Wv + np.conj(np.swapaxes(Wv, 1, 2)))


def _principal(Wk):
    lam, V = np.linalg.eigh(Wk)
    return V[:, -1]


def robust_tb_step(inst: Instance, ups, rho, spec: OutageSpec, errs: CsiErrorModel,
                   delta=10.0, t_max=20, rank_tol=1e-4, general=False):
    """Rank-penalized SCA on the robust SDP; returns (W, rank ratios per pass)."""
    W = p18(inst, ups, rho, spec, errs, general=general)
    ratios = [max(rank_ratio(Wk) for Wk in W)] if len(W) else [0.0]
    for _ in range(t_max):
        if ratios[-1] <= rank_tol:
            break
        W_new = p18(inst, ups, rho, spec, errs, [_principal(Wk) for Wk in W], delta, general)
        change = np.sum(np.abs(W_new - W)) / max(np.sum(np.abs(W)), 1e-300)
        W = W_new
        ratios.append(max(rank_ratio(Wk) for Wk in W))
        if change <= 1e-7:
            break
    return W, ratios


# ---- robust reflect step (penalty CCP) ----------------------------------

def linearized_sq(a, a0):
    """Tangent lower bound 2 Re(conj(a0) a) - |a0|^2 <= |a|^2 of an affine a."""
    return 2 * (np.conj(a0) * a).real - abs(a0) ** 2


def quad_lower_bound(Q, ups, ups0):
    """2 Re(ups^H Q ups0) - ups0^H Q ups0 <= ups^H Q ups for Q >= 0."""
    return float(2 * np.real(np.vdot(ups, Q @ ups0)) - np.real(np.vdot(ups0, Q @ ups0)))


def p20(inst: Instance, w, rho, spec: OutageSpec, errs: CsiErrorModel, anchor, varpi):
    """One penalty-CCP pass for the reflect vector.

    Convex terms on the >= side of a constraint are replaced by tangent
    lower bounds at ``anchor``; convex terms on the <= side are kept exact.
    Margins are normalized by each constraint's scale and maximized, and the
    unit-modulus constraint is relaxed by zeta >= 0 at price ``varpi``.
    Returns (ups, zeta, margins).
    """
    d = inst.dims
    K, M, U, N = d["K"], d["M"], d["U"], d["N"]
    th = inst.th
    ch = inst.ch
    m = Model()
    ups = m.complex(N)
    zeta = m.nonneg(2 * N)
    I_r = inst.risi(anchor)
    margins = []

    def margin():
        # capped so that constraints far from binding stop pulling on ups
        t = m.nonneg()
        m.add_le(t, 1.0)
        margins.append(t)
        return t

    wc = w.conj()
    # a[k][i](ups) = w_i^H h_k(ups)
    a = [[wc[i] @ ch.h_d[k] + np.conj(ch.Hk[k] @ w[i]) @ ups for i in range(K)] for k in range(K)]
    a0 = [[np.vdot(w[i], ch.h_d[k] + ch.Hk[k].conj().T @ anchor) for i in range(K)] for k in range(K)]
    for k in range(K):
        s = _iso_var(errs.eps2_hd[k], errs.eps2_Hk[k], anchor)
        if th.gamma[k] > 0:
            g = th.gamma[k]
            B = np.outer(w[k], wc[k]) - g * sum((np.outer(w[i], wc[i]) for i in range(K) if i != k),
                                                np.zeros((M, M)))
            scale = g * (I_r[k] + th.sigma2[k] + th.sigma2_c[k] / rho[k])
            c = linearized_sq(a[k][k], a0[k][k]) - scale
            if K > 1:
                q = m.real()
                m.add_quad_le(vstack([a[k][i] for i in range(K) if i != k]), q)
                c = c - g * q
            Bh = sum((w[i] * (1.0 if i == k else -g)) * a[k][i] for i in range(K))
            _emit_ccp(m, s, B, Bh, c, spec.p[k], "ge", margin(), scale)
        if th.q_rf[k] > 0:
            S = w.T @ wc
            c = sum(linearized_sq(a[k][i], a0[k][i]) for i in range(K)) + I_r[k] - th.q_rf[k] / (1.0 - rho[k])
            Sh = sum(w[i] * a[k][i] for i in range(K))
            _emit_ccp(m, s, S, Sh, c, spec.q[k], "ge", margin(), th.q_rf[k] / (1.0 - rho[k]))
    if inst.cfg.fisi_cascaded:
        S = w.T @ wc
        for u in range(U):
            if not np.isfinite(th.fisi[u]):
                continue
            s = _iso_var(errs.eps2_vd[u], errs.eps2_Vu[u], anchor)
            b = [wc[k] @ ch.v_d[u] + np.conj(ch.Vu[u] @ w[k]) @ ups for k in range(K)]
            r = m.real()
            m.add_quad_le(vstack(b), r)
            Sv = sum(w[k] * b[k] for k in range(K))
            _emit_ccp(m, s, S, Sv, r - th.fisi[u], spec.varsigma[u], "le", margin(), th.fisi[u])
    f = inst.f
    if f.size and np.isfinite(th.ciusi):
        Fbar = f.T @ f.conj()
        for u in range(U):
            gvec = ch.Gu[u].conj().T @ ups           # G_u^H ups, length L
            r = m.real()
            m.add_quad_le(f.conj() @ gvec, r)
            s = errs.eps2_Gu[u] * float(np.sum(np.abs(anchor) ** 2))
            _emit_ccp(m, s, Fbar, Fbar @ gvec, r - th.ciusi, spec.varrho[u], "le", margin(), th.ciusi)
    # unit modulus, convexified around the anchor
    for n in range(N):
        m.add_le(abs(anchor[n]) ** 2 - 2 * (np.conj(anchor[n]) * ups[n]).real, zeta[n] - 1.0)
        m.add_quad_le(ups[n], 1.0 + zeta[N + n])
    m.maximize(sum(margins, 0.0) - varpi * zeta.sum())
    _require(m, "robust reflect CCP")
    return (m.value(ups), np.maximum(m.value(zeta), 0.0),
            np.array([m.value(t) for t in margins]))


def _emit_ccp(m, s, B, Bh, c, p, sense, margin, scale):
    """BTI triple with constant B and an affine B h(ups), normalized by ``scale``."""
    if s == 0:
        if sense == "ge":
            m.add_ge(c / scale, margin)
        else:
            m.add_le(c / scale, -margin)
        return
    _emit_bti(m, s * B, np.sqrt(s) * Bh, c, p, sense, margin, scale)


@dataclass
class CcpResult:
    upsilon: np.ndarray
    passes: int
    restarts: int
    zeta: float
    modulus_dev: float
    solver_stop: bool = False  # ended on a failed pass with the modulus test already met


def robust_rb_ccp(inst: Instance, w, rho, spec: OutageSpec, errs: CsiErrorModel, ups_prev, rng,
                  varpi0=5.0, eta=3.0, varpi_max=1e4, chi=1e-5, nu=1e-4, r_max=30,
                  restarts=2) -> CcpResult:
    """Penalty CCP for the reflect vector; the first run is anchored at ``ups_prev``.

    A run that has not met both exit tests after ``r_max`` passes (or hits an
    infeasible pass) is restarted from a fresh random point drawn from
    ``rng``.  Raises CcpStalled once the restart budget is spent.
    """
    N = inst.dims["N"]
    start = np.asarray(ups_prev, dtype=complex)

    def done(ups, r, attempt, zeta, stalled=False):
        return CcpResult(ups, r, attempt, float(zeta.sum()),
                         float(np.max(np.abs(np.abs(ups) - 1.0))) if N else 0.0, stalled)

    for attempt in range(restarts + 1):
        anchor, varpi, zeta = start.copy(), varpi0, None
        for r in range(r_max):
            try:
                ups, zeta_new, _ = p20(inst, w, rho, spec, errs, anchor, varpi)
            except SubproblemInfeasible:
                # at large penalties the pass can fail numerically once the
                # iterate sits on the unit circle; keep it if it already does
                if zeta is not None and zeta.sum() <= chi:
                    return done(anchor, r, attempt, zeta, True)
                break
            zeta = zeta_new
            moved = float(np.sum(np.abs(ups - anchor)))
            anchor = ups
            if zeta.sum() <= chi and moved <= nu:
                return done(ups, r + 1, attempt, zeta)
            varpi = min(eta * varpi, varpi_max)
        start = ReflectVector.random(N, rng).upsilon
    raise CcpStalled(f"penalty CCP did not converge after {restarts} restarts")


# ---- certificates and Monte-Carlo validation ----------------------------

def bti_certificate(inst: Instance, w, rho, ups, spec: OutageSpec, errs: CsiErrorModel) -> BtiCertificate:
    """Re-evaluate every BTI triple at a rank-one design (solver units)."""
    d = inst.dims
    K, M, U = d["K"], d["M"], d["U"]
    th = inst.th
    h = inst.eff(ups).h
    I_r = inst.risi(ups)
    Wd = [np.outer(wk, wk.conj()) for wk in w]
    S = sum(Wd, np.zeros((M, M), dtype=complex))
    cert = BtiCertificate()

    def record(name, s, B, hh, c, p, sense, scale):
        E, e = s * B, np.sqrt(s) * (B @ hh)
        x, y, slack = bti_margin(E, e, c, p, sense)
        shift = y * np.eye(M) + (E if sense == "ge" else -E)
        # relative to the size of the terms that cancel in the slack
        a, b = _log_terms(p)
        size = scale + abs(float(np.real(hh.conj() @ B @ hh))) + a * x + b * y + abs(np.trace(E).real)
        cert.add(name, x, y, slack / size, float(np.linalg.eigvalsh(shift).min()))

    for k in range(K):
        s = _iso_var(errs.eps2_hd[k], errs.eps2_Hk[k], ups)
        if th.gamma[k] > 0:
            g = th.gamma[k]
            B = Wd[k] - g * (S - Wd[k])
            noise = g * (I_r[k] + th.sigma2[k] + th.sigma2_c[k] / rho[k])
            record("sinr", s, B, h[k], float(np.real(h[k].conj() @ B @ h[k])) - noise,
                   spec.p[k], "ge", noise)
        if th.q_rf[k] > 0:
            need = th.q_rf[k] / (1.0 - rho[k])
            record("eh", s, S, h[k], float(np.real(h[k].conj() @ S @ h[k])) + I_r[k] - need,
                   spec.q[k], "ge", need)
    v = inst.fisi_channel(ups)
    casc = inst.cfg.fisi_cascaded
    for u in range(U):
        if np.isfinite(th.fisi[u]):
            s = _iso_var(errs.eps2_vd[u], errs.eps2_Vu[u], ups, casc)
            record("fisi", s, S, v[u], float(np.real(v[u].conj() @ S @ v[u])) - th.fisi[u],
                   spec.varsigma[u], "le", th.fisi[u])
    f = inst.f
    if f.size and np.isfinite(th.ciusi):
        Fbar = f.T @ f.conj()
        L = Fbar.shape[0]
        for u in range(U):
            gv = inst.ch.Gu[u].conj().T @ ups
            s = errs.eps2_Gu[u] * float(np.sum(np.abs(ups) ** 2))
            E, e = s * Fbar, np.sqrt(s) * (Fbar @ gv)
            x, y, slack = bti_margin(E, e, float(np.real(gv.conj() @ Fbar @ gv)) - th.ciusi,
                                     spec.varrho[u], "le")
            a, b = _log_terms(spec.varrho[u])
            size = th.ciusi + float(np.real(gv.conj() @ Fbar @ gv)) + a * x + b * y + np.trace(E).real
            cert.add("ciusi", x, y, slack / size, float(np.linalg.eigvalsh(y * np.eye(L) - E).min()))
    return cert


@dataclass
class OutageReport:
    rates: dict   # family -> empirical outage per constraint
    n: int

    def sigma(self, p):
        return np.sqrt(np.asarray(p) * (1 - np.asarray(p)) / self.n)

    def within(self, spec: OutageSpec, n_sigma=2.0) -> bool:
        limits = dict(sinr=spec.p, eh=spec.q, fisi=spec.varsigma, ciusi=spec.varrho)
        return all(np.all(r <= limits[k] + n_sigma * self.sigma(limits[k]))
                   for k, r in self.rates.items() if np.size(r))

    def meets(self, spec: OutageSpec) -> bool:
        """Every empirical outage at or below its specification (no sampling allowance)."""
        return self.within(spec, 0.0)


def outage_monte_carlo(ch: ChannelSet, sol: DesignSolution, f: PrimaryPrecoder, cfg: ScenarioConfig,
                       model: CsiErrorModel, rng, n=10_000, batch=2_500) -> OutageReport:
    """Empirical outage of every constraint with truth = estimate + sampled error."""
    th = thresholds(cfg, sol.tau_bar)
    w, rho = np.asarray(sol.w), np.asarray(sol.rho)
    ups = sol.upsilon.upsilon
    K = w.shape[0]
    I_r = risi(ch, f, effective(ch, ups), cfg.risi_effective)
    counts = dict(sinr=np.zeros(K), eh=np.zeros(K), fisi=np.zeros(ch.v_d.shape[0]),
                  ciusi=np.zeros(ch.v_d.shape[0]))
    done = 0
    while done < n:
        b = min(batch, n - done)
        dl = sample_errors(ch, model, rng, b)
        h = ch.h_d + dl["h_d"] + np.einsum("sknm,n->skm", np.conj(ch.Hk + dl["Hk"]), ups)
        C = np.abs(np.einsum("skm,im->ski", h.conj(), w)) ** 2
        sig = np.einsum("skk->sk", C)
        tot = C.sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            sinr = sig / (tot - sig + I_r + th.sigma2 + th.sigma2_c / rho)
        counts["sinr"] += np.sum((sinr < th.gamma) & (th.gamma > 0), axis=0)
        counts["eh"] += np.sum(((1 - rho) * (tot + I_r) < th.q_rf) & (th.q_rf > 0), axis=0)
        v = ch.v_d + dl["v_d"]
        if cfg.fisi_cascaded:
            v = v + np.einsum("sunm,n->sum", np.conj(ch.Vu + dl["Vu"]), ups)
        fp = np.sum(np.abs(np.einsum("sum,km->suk", v.conj(), w)) ** 2, axis=2)
        counts["fisi"] += np.sum(fp > th.fisi, axis=0)
        if f.f.size:
            val = np.einsum("n,sunl,jl->suj", ups.conj(), ch.Gu + dl["Gu"], f.f)
            counts["ciusi"] += np.sum(np.sum(np.abs(val) ** 2, axis=2) > th.ciusi, axis=0)
        done += b
    return OutageReport({k: v / n for k, v in counts.items()}, n)


# ---- outer loop ----------------------------------------------------------

def robust_solve(ch: ChannelSet, f: PrimaryPrecoder, cfg: ScenarioConfig, spec: OutageSpec,
                 model: CsiErrorModel, init_ups=None, rng=None, eps=1e-4, j_max=30,
                 rho=None, omega_r=0.015, omega_e=1.0, delta=10.0, tau_bar=None,
                 general=False, ccp_kw=None, n_starts=3) -> DesignSolution:
    """Alternate the robust beamforming SDP and the penalty CCP at fixed PS ratios.

    ``ch`` holds the channel estimates and ``model`` the error variances in
    physical units.  Without ``init_ups`` the loop starts from the reflect
    vector of the perfect-CSI design at the same PS ratios, falling back to
    ``n_starts`` random points when the robust SDP is infeasible there.  The
    returned solution is the best iterate; its info carries the stop reason
    and a BTI certificate of the final design.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng() if rng is None else rng
    inst = build_instance(ch, f, cfg, tau_bar)
    errs = inst.errors(model)
    rho = fixed_ps_ratios(cfg, omega_r, omega_e, inst.tau_bar) if rho is None else np.asarray(rho, float)
    N = inst.dims["N"]
    warm = None
    if init_ups is not None:
        starts = [_ups(init_ups)]
    else:
        # the perfect-CSI design at the same PS ratios, then random points
        try:
            warm = am_solve(ch, f, cfg, rng=rng, rho_fixed=rho, tau_bar=inst.tau_bar)
            starts = [warm.upsilon.upsilon]
        except Infeasible:
            starts = []
        starts += [ReflectVector.random(N, rng).upsilon for _ in range(n_starts)]
    trace, best, ranks, passes = [], None, [], 0
    stop = "max_iter"
    ups = starts.pop(0)
    for j in range(j_max):
        try:
            W, ratios = robust_tb_step(inst, ups, rho, spec, errs, delta, general=general)
        except SubproblemInfeasible as exc:
            if best is None:
                if starts:
                    ups = starts.pop(0)
                    continue
                raise Infeasible(str(exc)) from exc
            stop = "tb_failed"
            break
        ranks.append(ratios[-1])
        try:
            w = np.array([extract_beamformer(Wk, 1e-4) for Wk in W])
        except NotRankOne:
            w = np.array([extract_beamformer(Wk, 1.0) for Wk in W])
        obj = inst.tau_bar * inst.p0 * float(np.sum(np.abs(w) ** 2))
        trace.append(obj)
        if best is None or obj <= best[0]:
            best = (obj, w, ups)
        if j > 0 and abs(trace[-2] - obj) <= eps * abs(trace[-2]):
            stop = "converged"
            break
        if N == 0:
            stop = "converged"
            break
        try:
            res = robust_rb_ccp(inst, w, rho, spec, errs, ups, rng, **(ccp_kw or {}))
        except CcpStalled:
            stop = "rb_stalled"
            break
        passes += res.passes
        ups = ReflectVector.normalized(res.upsilon).upsilon
    obj, w, ups = best
    sol = DesignSolution(inst.to_physical(w), rho.copy(), ReflectVector(ups), inst.tau_bar, trace=trace,
                         outer_iters=len(trace), inner_iters=passes,
                         rank_residual=float(max(ranks) if ranks else 0.0))
    sol.feasibility = check_feasibility(ch, sol, f, cfg, inst.tau_bar)
    sol.info.update(stop=stop, runtime=time.perf_counter() - t0,
                    perfect_objective=None if warm is None else warm.objective,
                    certificate=bti_certificate(inst, w, rho, ups, spec, errs))
    return sol
