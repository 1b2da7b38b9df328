"""Penalty-based block coordinate descent with a Riemannian conjugate-gradient
reflect step."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .am import extract_beamformer, p3, rank_ratio
from .channel import ChannelSet
from .conic import Model
from .errors import Infeasible, NotRankOne, SubproblemInfeasible
from .instance import Instance, build_instance
from .scenario import ScenarioConfig
from .sysmodel import DesignSolution, PrimaryPrecoder, ReflectVector, check_feasibility

SOLVER_TOL = 1e-8


@dataclass
class AuxiliaryBlocks:
    t: np.ndarray    # (K, K)  targets for h_k^H w_i
    psi: np.ndarray  # (U, K)  targets for v_u^H w_k
    lam: np.ndarray  # (U, U)  targets for ups^H G_u f_j


@dataclass
class PenaltyState:
    omega: float = 1e2
    c: float = 0.3
    floor: float = 1e-8
    outer: int = 0

    def step(self):
        self.omega = max(self.c * self.omega, self.floor)
        self.outer += 1


# ---- beamforming block ----------------------------------------------------

def tb_closed_form(h, v, t, psi, omega, tau_bar):
    """Minimizer of  tau_bar sum ||w_k||^2 + (1/2 omega)(sum |h_i^H w_k - t_ik|^2
    + sum |v_u^H w_k - psi_uk|^2)  over each w_k.

    Stationarity gives (2 omega tau_bar I + sum h h^H + sum v v^H) w_k
    = sum_i h_i t_ik + sum_u v_u psi_uk.
    """
    h = np.atleast_2d(h)
    M = h.shape[1]
    v = np.asarray(v).reshape(-1, M)
    A = 2 * omega * tau_bar * np.eye(M) + h.T @ h.conj() + v.T @ v.conj()
    rhs = h.T @ t + (v.T @ psi if v.size else 0.0)  # (M, K), column k
    return np.linalg.solve(A, rhs).T


def p10_objective(w, h, v, t, psi, omega, tau_bar):
    C = h.conj() @ w.T
    F = v.conj() @ w.T if v.size else np.zeros((0, w.shape[0]))
    return tau_bar * np.sum(np.abs(w) ** 2) + (np.sum(np.abs(C - t) ** 2) + np.sum(np.abs(F - psi) ** 2)) / (2 * omega)


# ---- reflect block (manifold of unit-modulus vectors) ----------------------

class ReflectLsq:
    """f(ups) = || A^H ups + b ||^2 with A (N, R) and b (R,).

    Evaluated through the Gram form ups^H P ups + 2 Re(q^H ups) + c0 with
    P = A A^H and q = A b, which keeps every evaluation O(N^2).
    """

    def __init__(self, A, b):
        self.A = np.asarray(A)
        self.b = np.asarray(b)
        self.P = self.A @ self.A.conj().T
        self.q = self.A @ self.b
        self.c0 = float(np.real(np.vdot(self.b, self.b)))

    def normalized(self):
        """Same minimizer, Gram matrix scaled to unit spectral norm so that a
        unit Armijo trial step matches the curvature."""
        top = float(np.linalg.eigvalsh(self.P)[-1]) if self.P.size else 0.0
        if top <= 0:
            return self
        return ReflectLsq(self.A / np.sqrt(top), self.b / np.sqrt(top))

    def residual(self, ups):
        return self.A.conj().T @ ups + self.b

    def value(self, ups):
        return float(np.real(np.vdot(ups, self.P @ ups)) + 2 * np.real(np.vdot(self.q, ups)) + self.c0)

    def egrad(self, ups):
        """Euclidean gradient 2 df/d(ups*) = 2 A (A^H ups + b)."""
        return 2.0 * (self.P @ ups + self.q)


def reflect_lsq(inst: Instance, w, aux: AuxiliaryBlocks) -> ReflectLsq:
    ch = inst.ch
    K, U, N = inst.dims["K"], inst.dims["U"], inst.dims["N"]
    cols, offs = [], []
    av = np.einsum("knm,im->kin", ch.Hk, w)       # H_k w_i
    a0 = ch.h_d.conj() @ w.T
    cols.append(av.reshape(K * K, N).T)
    offs.append((a0 - aux.t).ravel())
    if U:
        cv = np.einsum("unl,jl->ujn", ch.Gu, inst.f)  # G_u f_j
        cols.append(cv.reshape(U * U, N).T)
        offs.append(-aux.lam.ravel())
        if inst.cfg.fisi_cascaded:
            bv = np.einsum("unm,km->ukn", ch.Vu, w)
            b0 = ch.v_d.conj() @ w.T
            cols.append(bv.reshape(U * K, N).T)
            offs.append((b0 - aux.psi).ravel())
    # couplings are ups^H a + b0; A^H ups + conj(b0) is their conjugate, same norm
    return ReflectLsq(np.concatenate(cols, axis=1), np.concatenate(offs).conj())


def rgrad(egrad, ups):
    return egrad - np.real(egrad * ups.conj()) * ups


def retract(z):
    return z / np.abs(z)


def rb_rcg(obj: ReflectLsq, ups0, tol=1e-6, max_iter=500, step0=1.0, beta=0.5, c1=1e-4):
    """Polak-Ribiere conjugate gradient on the product of unit circles.

    Returns (ups, f, iterations, grad_norm).
    """
    ups = retract(np.asarray(ups0, dtype=complex))
    f = obj.value(ups)
    g = rgrad(obj.egrad(ups), ups)
    d = -g
    it = 0
    for it in range(1, max_iter + 1):
        gn = np.linalg.norm(g)
        if gn <= tol:
            it -= 1
            break
        slope = np.real(np.vdot(g, d))
        if slope >= 0:
            d, slope = -g, -gn ** 2
        eta = step0
        while True:
            cand = retract(ups + eta * d)
            fc = obj.value(cand)
            if fc <= f + c1 * eta * slope or eta < 1e-20:
                break
            eta *= beta
        if fc > f:  # no decrease possible along d
            break
        g_new = rgrad(obj.egrad(cand), cand)
        # vector transport by projection onto the new tangent space
        g_tr = g - np.real(g * cand.conj()) * cand
        d_tr = d - np.real(d * cand.conj()) * cand
        pr = np.real(np.vdot(g_new, g_new - g_tr)) / max(gn ** 2, 1e-300)
        d = -g_new + max(pr, 0.0) * d_tr
        ups, f, g = cand, fc, g_new
    return ups, f, it, float(np.linalg.norm(g))


# ---- power splitting / auxiliary block --------------------------------------

def ps_aux_socp(inst: Instance, c_k, anchor, k, I_r):
    """Per-SR convex restriction of the (rho, t) block.

    min ||t - c||  s.t.  z <= (1+G) lin|t_k|^2 - G(||t||^2 + I + s2),  z rho >= G s2c,
                         sum lin|t_i|^2 + I >= e,  e (1 - rho) >= Q,  0 <= rho <= 1,
    where lin|t|^2 = 2 Re(anchor^* t) - |anchor|^2 lower-bounds |t|^2, so every
    feasible point is feasible for the original (nonconvex) constraints.
    """
    th = inst.th
    K = c_k.size
    G, s2, s2c, Q = th.gamma[k], th.sigma2[k], th.sigma2_c[k], th.q_rf[k]
    m = Model()
    t = m.complex(K)
    rho = m.real()
    r = m.real()
    m.add_soc(r, t - c_k)
    m.add_ge(rho, 0.0)
    m.add_le(rho, 1.0)
    lin = [2 * (np.conj(anchor[i]) * t[i]).real - abs(anchor[i]) ** 2 for i in range(K)]
    if G > 0:
        q = m.real()
        m.add_quad_le(t, q)
        z = (1 + G) * lin[k] - G * (q + I_r + s2)
        if s2c > 0:
            m.add_rsoc(z, rho, np.sqrt(G * s2c))
        else:
            m.add_ge(z)
    if Q > 0:
        e = m.real()
        m.add_ge(sum(lin, 0.0) + I_r, e)
        m.add_rsoc(e, 1.0 - rho, np.sqrt(Q))
    m.minimize(r)
    sol = m.solve(tol=SOLVER_TOL)
    if not sol.ok:
        raise SubproblemInfeasible(f"power-splitting SOCP: {sol.status}")
    return float(np.clip(m.value(rho), 0.0, 1.0)), m.value(t)


def project_ball(a, radius2):
    a = np.asarray(a)
    n2 = float(np.sum(np.abs(a) ** 2))
    if n2 <= radius2:
        return a.copy()
    return a * np.sqrt(radius2 / n2)


def project_ball_bisection(a, radius2, tol=1e-14, max_iter=200):
    """Same projection through the dual: x = a / (1 + nu) with nu found by bisection."""
    a = np.asarray(a)
    n = float(np.linalg.norm(a))
    if n ** 2 <= radius2:
        return a.copy()
    lo, hi = 0.0, 1.0
    while n / (1 + hi) > np.sqrt(radius2):
        hi *= 2
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if n / (1 + mid) > np.sqrt(radius2):
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return a / (1 + hi)


def psi_lambda_projection(values, radius2, method="closed"):
    fn = project_ball if method == "closed" else project_ball_bisection
    return fn(values, radius2)


# ---- warm start -------------------------------------------------------------

def zf_warm_start(inst: Instance, ups, grid=2000):
    """Zero-forcing directions with per-user power and PS ratio chosen so that
    every SINR/EH constraint holds; returns (w, rho)."""
    th = inst.th
    h = inst.eff(ups).h
    K, M = h.shape
    if K <= M and np.linalg.matrix_rank(h) == K:
        D = np.linalg.pinv(h.conj())  # (M, K), h^H D = I
    else:
        D = h.T.copy()
    D = D / np.linalg.norm(D, axis=0, keepdims=True)
    gains = np.abs(h.conj() @ D) ** 2
    I_r = inst.risi(ups)
    rgrid = (np.arange(1, grid) / grid)
    w = np.zeros((K, M), dtype=complex)
    rho = np.full(K, 0.5)
    # fixed point on powers because of leakage when ZF is unavailable
    p = np.zeros(K)
    for _ in range(50):
        p_old = p.copy()
        for k in range(K):
            g = gains[k, k]
            leak = sum(p[i] * gains[k, i] for i in range(K) if i != k)
            need_id = th.gamma[k] * (leak + I_r[k] + th.sigma2[k] + th.sigma2_c[k] / rgrid) / g
            need_eh = (th.q_rf[k] / (1 - rgrid) - I_r[k] - leak) / g
            need = np.maximum(np.maximum(need_id, need_eh), 0.0)
            j = int(np.argmin(need))
            p[k], rho[k] = need[j], rgrid[j]
        if np.allclose(p, p_old, rtol=1e-12):
            break
    w = (D * np.sqrt(p * 1.001)).T
    return w, rho


# ---- driver ---------------------------------------------------------------

def _couplings(inst, ups, w):
    eff = inst.eff(ups)
    C = eff.h.conj() @ w.T
    v = inst.fisi_channel(ups)
    F = v.conj() @ w.T
    Lm = np.einsum("n,unl,jl->uj", ups.conj(), inst.ch.Gu, inst.f) if inst.f.size else np.zeros((0, 0))
    return C, F, Lm


def p9_objective(inst, ups, w, aux, omega):
    C, F, Lm = _couplings(inst, ups, w)
    pen = np.sum(np.abs(C - aux.t) ** 2) + np.sum(np.abs(F - aux.psi) ** 2) + np.sum(np.abs(Lm - aux.lam) ** 2)
    return inst.tau_bar * float(np.sum(np.abs(w) ** 2)) + pen / (2 * omega)


def residual_indicator(inst, ups, w, aux) -> float:
    C, F, Lm = _couplings(inst, ups, w)
    parts = [np.abs(C - aux.t) ** 2, np.abs(F - aux.psi) ** 2, np.abs(Lm - aux.lam) ** 2]
    return float(max((p.max() for p in parts if p.size), default=0.0))


def _project_aux(inst, F, Lm):
    th = inst.th
    U = F.shape[0]
    psi = np.array([psi_lambda_projection(F[u], th.fisi[u]) if np.isfinite(th.fisi[u]) else F[u]
                    for u in range(U)]).reshape(F.shape)
    lam = np.array([psi_lambda_projection(Lm[u], th.ciusi) if np.isfinite(th.ciusi) else Lm[u]
                    for u in range(U)]).reshape(Lm.shape)
    return psi, lam


def _repair(inst, ups):
    """(w, rho, rank ratio) from the beamforming SDP at ``ups``, or None if infeasible."""
    try:
        W, rho = p3(inst, ups)
    except SubproblemInfeasible:
        return None
    ratio = max((rank_ratio(Wk) for Wk in W), default=0.0)
    try:
        w = np.array([extract_beamformer(Wk) for Wk in W])
    except NotRankOne:
        w = np.array([extract_beamformer(Wk, 1.0) for Wk in W])
    return w, rho, ratio


def bcd_solve(ch: ChannelSet, f: PrimaryPrecoder, cfg: ScenarioConfig, init_ups=None, rng=None,
              omega0=1.0, c=0.3, floor=1e-8, eps1=1e-4, eps2=1e-7, max_outer=40, max_inner=200,
              rcg_iters=500, tau_bar=None, repair=True, rcg_normalize=True) -> DesignSolution:
    """Inner BCD sweeps with a geometrically decreasing penalty weight."""
    t0 = time.perf_counter()
    rng = np.random.default_rng() if rng is None else rng
    inst = build_instance(ch, f, cfg, tau_bar)
    K, N = inst.dims["K"], inst.dims["N"]
    ups = np.asarray(getattr(init_ups, "upsilon", init_ups), complex) if init_ups is not None \
        else ReflectVector.random(N, rng).upsilon
    w, rho = zf_warm_start(inst, ups)
    C, F, Lm = _couplings(inst, ups, w)
    psi, lam = _project_aux(inst, F, Lm)
    aux = AuxiliaryBlocks(C.copy(), psi, lam)
    pen = PenaltyState(omega0, c, floor)
    trace, raw_trace, repaired, xis, inner_total, counts, best = [], [], [], [], 0, [], None
    stop = "max_iter"
    for _ in range(max_outer):
        prev = p9_objective(inst, ups, w, aux, pen.omega)
        for _ in range(max_inner):
            inner_total += 1
            v = inst.fisi_channel(ups)
            w = tb_closed_form(inst.eff(ups).h, v, aux.t, aux.psi, pen.omega, inst.tau_bar)
            if N:
                obj = reflect_lsq(inst, w, aux)
                ups, *_ = rb_rcg(obj.normalized() if rcg_normalize else obj, ups, max_iter=rcg_iters)
            C, F, Lm = _couplings(inst, ups, w)
            I_r = inst.risi(ups)
            t_new = aux.t.copy()
            try:
                for k in range(K):
                    rho[k], t_new[k] = ps_aux_socp(inst, C[k], aux.t[k], k, I_r[k])
            except SubproblemInfeasible as exc:
                raise Infeasible(str(exc)) from exc
            aux.t = t_new
            aux.psi, aux.lam = _project_aux(inst, F, Lm)
            cur = p9_objective(inst, ups, w, aux, pen.omega)
            done = prev - cur <= eps1 * abs(prev)
            prev = cur
            if done:
                break
        counts.append(inner_total)
        xi = residual_indicator(inst, ups, w, aux)
        xis.append(xi)
        raw_trace.append(inst.tau_bar * inst.p0 * float(np.sum(np.abs(w) ** 2)))
        if repair:
            # transmit power that the current reflect vector actually needs
            cand = _repair(inst, ups)
            val = np.inf if cand is None else inst.tau_bar * inst.p0 * float(np.sum(np.abs(cand[0]) ** 2))
            repaired.append(val)
            if cand is not None and (best is None or val <= best[0]):
                best = (val, cand, ups.copy())
            # objective of the solution that would be returned if stopped here
            trace.append(best[0] if best is not None else np.inf)
        else:
            trace.append(raw_trace[-1])
        if xi <= eps2:
            stop = "converged"
            break
        pen.step()
    raw = DesignSolution(inst.to_physical(w), rho.copy(), ReflectVector.normalized(ups), inst.tau_bar)
    if not repair:
        sol = raw
    elif best is None:
        raise Infeasible("no outer iterate admits a feasible beamforming solution")
    else:
        _, (wr, rho_r, rr), ups_b = best
        sol = DesignSolution(inst.to_physical(wr), rho_r, ReflectVector.normalized(ups_b), inst.tau_bar,
                             rank_residual=rr)
    sol.trace = trace
    sol.outer_iters = len(trace)
    sol.inner_iters = inner_total
    sol.feasibility = check_feasibility(ch, sol, f, cfg, inst.tau_bar)
    sol.info.update(stop=stop, xi=xis, inner_counts=counts, raw_trace=raw_trace, repaired_trace=repaired, raw_objective=raw.objective,
                    runtime=time.perf_counter() - t0)
    return sol
