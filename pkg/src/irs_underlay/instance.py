"""Design instance in normalized solver units.

Received powers are measured in units of ``r0`` and transmit powers in units
of ``p0``; channels are scaled by sqrt(p0/r0) and both precoders by
1/sqrt(p0).  Every SINR, harvesting and interference constraint is invariant
under this change of units, and the conic subproblems see O(1) data.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSet, CsiErrorModel, Effective, effective
from .scenario import ScenarioConfig, compute_overhead
from .sysmodel import PrimaryPrecoder, Thresholds, risi, thresholds


@dataclass
class Instance:
    ch: ChannelSet          # scaled channels
    f: np.ndarray           # (U, L) scaled primary precoder
    th: Thresholds          # scaled thresholds
    cfg: ScenarioConfig
    p0: float
    r0: float
    # power unit learned from earlier SDP solutions, relative to p0
    w_scale: float = 1.0

    @property
    def dims(self):
        return self.ch.dims

    @property
    def tau_bar(self):
        return self.th.tau_bar

    def eff(self, ups) -> Effective:
        return effective(self.ch, ups, check=False)

    def risi(self, ups=None) -> np.ndarray:
        eff = self.eff(ups) if (self.cfg.risi_effective and ups is not None) else None
        return risi(self.ch, PrimaryPrecoder(self.f), eff, self.cfg.risi_effective)

    def fisi_channel(self, ups) -> np.ndarray:
        """(U, M) channel that carries forward interference."""
        return self.eff(ups).v if self.cfg.fisi_cascaded else self.ch.v_d

    def fisi_cascade(self) -> np.ndarray:
        """Cascaded part of the FISI channel (zero unless the cascaded variant is on)."""
        if self.cfg.fisi_cascaded:
            return self.ch.Vu
        return np.zeros_like(self.ch.Vu)

    def to_physical(self, w) -> np.ndarray:
        return np.asarray(w) * np.sqrt(self.p0)

    def to_solver(self, w) -> np.ndarray:
        return np.asarray(w) / np.sqrt(self.p0)

    def errors(self, model: CsiErrorModel) -> CsiErrorModel:
        return model.scaled(self.p0 / self.r0)

    def rescaled(self, kappa: float) -> "Instance":
        """Same instance with the transmit power unit multiplied by ``kappa``."""
        a = np.sqrt(kappa)
        return Instance(self.ch.scaled(a), self.f / a, self.th, self.cfg, self.p0 * kappa, self.r0)


def power_scaled(inst: Instance, build, errs: CsiErrorModel | None = None):
    """Run ``build(sub_instance, sub_errs) -> (W, ...)`` in a power unit matching W.

    When the per-user trace of W lands far from one, the solve is repeated
    with the unit moved to that trace and the factor is kept on ``inst`` for
    later calls.  W is returned in the units of ``inst``.
    """
    for attempt in range(2):
        k = inst.w_scale
        sub = inst if k == 1.0 else inst.rescaled(k)
        out = build(sub, None if errs is None else errs.scaled(k))
        W = out[0]
        t = float(np.real(np.einsum("kii->", W))) / max(len(W), 1)
        if attempt == 1 or t <= 0 or 0.1 <= t <= 10.0:
            return (W * k,) + tuple(out[1:])
        inst.w_scale = k * t


def build_instance(ch: ChannelSet, f: PrimaryPrecoder, cfg: ScenarioConfig,
                   tau_bar: float | None = None) -> Instance:
    tb = compute_overhead(cfg).tau_bar if tau_bar is None else tau_bar
    th = thresholds(cfg, tb)
    demand = np.concatenate([th.q_rf, th.gamma * (th.sigma2 + th.sigma2_c)])
    demand = demand[np.isfinite(demand) & (demand > 0)]
    r0 = float(np.max(demand)) if demand.size else 1.0
    gain = np.mean(np.sum(np.abs(ch.h_d) ** 2, axis=1)
                   + (np.sum(np.abs(ch.Hk) ** 2, axis=(1, 2)) if ch.Hk is not None else 0.0))
    p0 = r0 / gain if gain > 0 else 1.0
    a = np.sqrt(p0 / r0)
    sth = replace(th, q_rf=th.q_rf / r0, fisi=th.fisi / r0, ciusi=th.ciusi / r0,
                  sigma2=th.sigma2 / r0, sigma2_c=th.sigma2_c / r0)
    return Instance(ch.scaled(a), f.f / np.sqrt(p0), sth, cfg, p0, r0)
