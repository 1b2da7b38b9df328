"""Penalty-based alternating minimization: SDR beamforming/power-splitting
step and a rank-penalized SCA step for the reflect vector."""
from __future__ import annotations

import time

import numpy as np

from .channel import ChannelSet
from .conic import Model
from .errors import Infeasible, NotRankOne, SubproblemInfeasible
from .instance import Instance, build_instance, power_scaled
from .scenario import ScenarioConfig
from .sysmodel import DesignSolution, PrimaryPrecoder, ReflectVector, check_feasibility

SOLVER_TOL = 1e-8
# interference caps are tightened by this fraction: zero-forcing solutions
# cancel large beamformer entries against a tiny cap, and solver round-off
# would otherwise show up as ~1e-5 relative violations
CAP_BACKOFF = 1e-4


def _require(model: Model, what: str):
    sol = model.solve(tol=SOLVER_TOL)
    if not sol.ok:
        raise SubproblemInfeasible(f"{what}: solver status {sol.status}")
    return sol


def rank_ratio(W) -> float:
    lam = np.linalg.eigvalsh(W)
    if lam[-1] <= 0:
        return 0.0
    return float(max(lam[-2], 0.0) / lam[-1]) if lam.size > 1 else 0.0


def extract_beamformer(W, tol: float = 1e-6) -> np.ndarray:
    W = 0.5 * (np.asarray(W) + np.asarray(W).conj().T)
    lam, U = np.linalg.eigh(W)
    if lam[-1] <= 1e-14 * max(1.0, np.abs(W).max()):
        return np.zeros(W.shape[0], dtype=complex)
    if lam.size > 1 and lam[-2] / lam[-1] > tol:
        raise NotRankOne(f"second/first eigenvalue ratio {lam[-2] / lam[-1]:.2e} exceeds {tol:.0e}")
    w = np.sqrt(lam[-1]) * U[:, -1]
    lead = np.flatnonzero(np.abs(w) > 1e-12 * np.abs(w).max())[0]
    return w * np.exp(-1j * np.angle(w[lead]))


# ---- beamforming / power-splitting step ------------------------------------

def p3(inst: Instance, ups, rho_fixed=None):
    """Beamforming SDP (see :func:`_p3`) solved in a well-scaled power unit."""
    return power_scaled(inst, lambda sub, _: _p3(sub, ups, rho_fixed))


def _p3(inst: Instance, ups, rho_fixed=None):
    """Transmit beamforming and PS ratios for a fixed reflect vector.

    The conversion-noise term sigma_c^2/rho enters through s_k with
    s_k * rho_k >= sigma_c^2 and the harvesting target through e_k with
    e_k * (1 - rho_k) >= Q_k; both are rotated second-order cones, so the
    problem is jointly convex in (W, rho, s, e).  Returns (W, rho) in solver
    units.
    """
    d = inst.dims
    K, M = d["K"], d["M"]
    th = inst.th
    h = inst.eff(ups).h
    I_r = inst.risi(ups)
    m = Model()
    W = [m.hermitian(M) for _ in range(K)]
    for Wk in W:
        m.add_psd(Wk)
    P = [[W[i].inner(np.outer(h[k], h[k].conj())).real for i in range(K)] for k in range(K)]
    if rho_fixed is None:
        rho = m.real(K)
        m.add_ge(rho, 0.0)
        m.add_le(rho, 1.0)
    for k in range(K):
        rk = rho[k] if rho_fixed is None else float(rho_fixed[k])
        others = sum((P[k][i] for i in range(K) if i != k), 0.0)
        if th.gamma[k] > 0:
            if th.sigma2_c[k] > 0:
                if rho_fixed is None:
                    s = m.real()
                    m.add_rsoc(s, rk, np.sqrt(th.sigma2_c[k]))
                else:
                    s = th.sigma2_c[k] / rk
            else:
                s = 0.0
            # rows are divided by a fixed scale so that each reads in relative units
            scale = th.gamma[k] * (I_r[k] + th.sigma2[k] + th.sigma2_c[k])
            m.add_ge((P[k][k] - th.gamma[k] * (others + I_r[k] + th.sigma2[k] + s)) / scale)
        if th.q_rf[k] > 0:
            if rho_fixed is None:
                e = m.real()
                m.add_rsoc(e, 1.0 - rk, np.sqrt(th.q_rf[k]))
            else:
                e = th.q_rf[k] / (1.0 - rk)
            m.add_ge((P[k][k] + others + I_r[k] - e) / th.q_rf[k])
    v = inst.fisi_channel(ups)
    for u in range(d["U"]):
        if np.isfinite(th.fisi[u]):
            Vv = np.outer(v[u], v[u].conj())
            m.add_le(sum(Wk.inner(Vv).real for Wk in W) / th.fisi[u], 1.0 - CAP_BACKOFF)
    m.minimize(sum(Wk.trace().real for Wk in W))
    _require(m, "beamforming SDP")
    Wv = np.array([m.value(Wk) for Wk in W]).reshape(K, M, M)
    Wv = 0.5 * (Wv + np.conj(np.swapaxes(Wv, 1, 2)))
    rv = np.clip(m.value(rho), 0.0, 1.0) if rho_fixed is None else np.asarray(rho_fixed, float)
    return Wv, rv


def solve_jtbps_sdp(ch: ChannelSet, ups, f: PrimaryPrecoder, cfg: ScenarioConfig, rho_fixed=None, tau_bar=None):
    """Physical-unit wrapper of :func:`p3`; returns (W, rho)."""
    inst = build_instance(ch, f, cfg, tau_bar)
    W, rho = p3(inst, _ups(ups), rho_fixed)
    return W * inst.p0, rho


# ---- reflect beamforming step ---------------------------------------------

def _lift_form(avec, a0):
    """Phi with  [v; x]^H Phi [v; x] + |a0|^2 = |v^H avec + a0|^2  for x = 1."""
    n = avec.size
    Phi = np.zeros((n + 1, n + 1), dtype=complex)
    Phi[:n, :n] = np.outer(avec, avec.conj())
    Phi[:n, n] = avec * np.conj(a0)
    Phi[n, :n] = a0 * avec.conj()
    return Phi


def lifted_forms(inst: Instance, w, rho):
    """Constant data of the lifted reflect-beamforming problem."""
    d = inst.dims
    K, U = d["K"], d["U"]
    ch = inst.ch
    a0 = ch.h_d.conj() @ w.T                       # (K, K): h_d,k^H w_i
    av = np.einsum("knm,im->kin", ch.Hk, w)        # (K, K, N): H_k w_i
    Phi = [[_lift_form(av[k, i], a0[k, i]) for i in range(K)] for k in range(K)]
    b0 = ch.v_d.conj() @ w.T                       # (U, K)
    bv = np.einsum("unm,km->ukn", inst.fisi_cascade(), w)
    Psi = [[_lift_form(bv[u, k], b0[u, k]) for k in range(K)] for u in range(U)]
    cv = np.einsum("unl,jl->ujn", ch.Gu, inst.f)   # (U, U, N): G_u f_j
    Omega = [sum(_lift_form(cv[u, j], 0.0) for j in range(U)) if U else None for u in range(U)]
    if inst.cfg.risi_effective and U:
        r0 = ch.u_d.conj() @ inst.f.T              # (K, U)
        rv = np.einsum("knl,ul->kun", ch.Uk, inst.f)
        Risi = [(sum(_lift_form(rv[k, u], r0[k, u]) for u in range(U)), float(np.sum(np.abs(r0[k]) ** 2)))
                for k in range(K)]
    else:
        I_r = inst.risi()
        Risi = [(None, I_r[k]) for k in range(K)]
    return dict(a0=a0, Phi=Phi, b0=b0, Psi=Psi, Omega=Omega, Risi=Risi)


def p7(inst: Instance, w, rho, anchor: np.ndarray, forms=None):
    """One SCA step: maximize lambda^H V lambda (the linearized spectral norm)
    over the lifted feasibility set; returns V."""
    d = inst.dims
    K, U, N = d["K"], d["U"], d["N"]
    th = inst.th
    fm = forms or lifted_forms(inst, w, rho)
    m = Model()
    V = m.hermitian(N + 1)
    m.add_psd(V)
    idx = np.arange(N + 1)
    m.add_eq(V[idx, idx].real, 1.0)
    pw = [[V.inner(fm["Phi"][k][i]).real + abs(fm["a0"][k, i]) ** 2 for i in range(K)] for k in range(K)]
    for k in range(K):
        Rk, Rc = fm["Risi"][k]
        I_r = Rc if Rk is None else V.inner(Rk).real + Rc
        others = sum((pw[k][i] for i in range(K) if i != k), 0.0)
        if th.gamma[k] > 0:
            noise = th.sigma2[k] + (th.sigma2_c[k] / rho[k] if rho[k] > 0 else np.inf)
            m.add_ge(pw[k][k] - th.gamma[k] * (others + I_r + noise))
        if th.q_rf[k] > 0:
            need = th.q_rf[k] / (1.0 - rho[k]) if rho[k] < 1 else np.inf
            m.add_ge(pw[k][k] + others + I_r, need)
    for u in range(U):
        if inst.cfg.fisi_cascaded and np.isfinite(th.fisi[u]):
            m.add_le(sum(V.inner(fm["Psi"][u][k]).real + abs(fm["b0"][u, k]) ** 2 for k in range(K)), th.fisi[u])
        if np.isfinite(th.ciusi) and np.any(fm["Omega"][u]):
            m.add_le(V.inner(fm["Omega"][u]).real, th.ciusi)
    lam = _principal(anchor)
    m.maximize(V.inner(np.outer(lam, lam.conj())).real)
    _require(m, "reflect-beamforming SDP")
    Vv = m.value(V)
    return 0.5 * (Vv + Vv.conj().T)


def _principal(V):
    lam, U = np.linalg.eigh(0.5 * (V + V.conj().T))
    return U[:, -1]


def rank_residual(V) -> float:
    tr = float(np.real(np.trace(V)))
    return 0.0 if tr <= 0 else float(max(0.0, 1.0 - np.linalg.eigvalsh(V)[-1] / tr))


def penalty_value(V, mu: float = 1e-3) -> float:
    """(||V||_* - ||V||_2) / (2 mu) for PSD V."""
    lam = np.linalg.eigvalsh(0.5 * (V + V.conj().T))
    return float((np.sum(np.abs(lam)) - lam[-1]) / (2 * mu))


def rb_sca(inst: Instance, w, rho, V0, eps=1e-4, t_max=50, mu=1e-3):
    """Penalized SCA loop; returns (V, penalty trace)."""
    forms = lifted_forms(inst, w, rho)
    V = V0
    trace = []
    for _ in range(t_max):
        V = p7(inst, w, rho, V, forms)
        trace.append(penalty_value(V, mu))
        if rank_residual(V) <= eps:
            break
    return V, trace


def rb_sca_step(ch, w, rho, f, V_prev, mu, cfg, tau_bar=None):
    """Single SCA step in physical units."""
    inst = build_instance(ch, f, cfg, tau_bar)
    return p7(inst, inst.to_solver(w), np.asarray(rho, float), V_prev)


def recover_upsilon(V, tol: float = 1e-4) -> ReflectVector:
    if rank_residual(V) > tol:
        raise NotRankOne(f"lifted matrix rank residual {rank_residual(V):.2e} exceeds {tol:.0e}")
    lam, U = np.linalg.eigh(0.5 * (V + V.conj().T))
    vb = U[:, -1] * np.sqrt(max(lam[-1], 0.0))
    return ReflectVector.normalized(vb[:-1] / vb[-1])


def _ups(ups):
    return np.asarray(getattr(ups, "upsilon", ups), dtype=complex)


# ---- outer loop -----------------------------------------------------------

def am_solve(ch: ChannelSet, f: PrimaryPrecoder, cfg: ScenarioConfig, init_ups=None, rng=None,
             eps=1e-4, j_max=30, t_max=50, rho_fixed=None, tau_bar=None, rank_tol=1e-6) -> DesignSolution:
    """Alternate the beamforming SDP and the reflect SCA loop."""
    t0 = time.perf_counter()
    rng = np.random.default_rng() if rng is None else rng
    inst = build_instance(ch, f, cfg, tau_bar)
    N = inst.dims["N"]
    ups = _ups(init_ups) if init_ups is not None else ReflectVector.random(N, rng).upsilon
    trace, best, inner, ranks = [], None, 0, []
    stop = "max_iter"
    for j in range(j_max):
        try:
            W, rho = p3(inst, ups, rho_fixed)
        except SubproblemInfeasible as exc:
            if best is None:
                raise Infeasible(str(exc)) from exc
            stop = "tb_failed"
            break
        ranks.extend(rank_ratio(Wk) for Wk in W)
        try:
            w = np.array([extract_beamformer(Wk, rank_tol) for Wk in W])
        except NotRankOne:
            w = np.array([extract_beamformer(Wk, 1.0) for Wk in W])
        obj = inst.tau_bar * float(np.sum(np.abs(w) ** 2)) * inst.p0
        trace.append(obj)
        if best is None or obj <= best[0]:
            best = (obj, w, rho, ups)
        if j > 0 and abs(trace[-2] - obj) <= eps * max(abs(trace[-2]), 1e-300):
            stop = "converged"
            break
        if N == 0:
            stop = "converged"
            break
        vb0 = np.exp(1j * rng.uniform(0, 2 * np.pi, N + 1))
        try:
            V, sca = rb_sca(inst, w, rho, np.outer(vb0, vb0.conj()), eps, t_max)
            inner += len(sca)
            ranks.append(rank_residual(V))
            ups = recover_upsilon(V, eps).upsilon
        except (SubproblemInfeasible, NotRankOne):
            stop = "rb_stalled"
            break
    obj, w, rho, ups = best
    sol = DesignSolution(inst.to_physical(w), rho, ReflectVector(ups), inst.tau_bar, trace=trace,
                         outer_iters=len(trace), inner_iters=inner,
                         rank_residual=float(max(ranks) if ranks else 0.0))
    sol.feasibility = check_feasibility(ch, sol, f, cfg, inst.tau_bar)
    sol.info.update(stop=stop, runtime=time.perf_counter() - t0)
    return sol
