"""Monte-Carlo trials, benchmark schemes and parameter sweeps with CSV output."""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .am import am_solve, extract_beamformer, p3
from .bcd import bcd_solve
from .channel import ChannelSet, CsiErrorModel, synthesize
from .errors import ConfigError, Infeasible, SubproblemInfeasible, UnderlayError
from .instance import build_instance
from .quantize import quantize_phases
from .robust import OutageSpec, robust_solve
from .scenario import (ScenarioConfig, compute_overhead, config_from_dict, db2pow, dbm2watt,
                       parse_key_values, place_nodes, watt2dbm)
from .sysmodel import (DesignSolution, PrimaryPrecoder, ReflectVector, check_feasibility,
                       zf_primary_precoder)

ALGORITHMS = ("AM", "BCD", "Robust", "RandomRB", "NoIRS", "Isolated", "Quantized-F")
AXES = ("gamma_db", "q_dbm", "M", "N", "distance", "eps2", "F", "T")
COLUMNS = ("axis", "value", "algorithm", "trial", "seed", "objective_dBm", "feasible", "outer_iters",
           "inner_iters", "runtime_ms", "rank_residual", "status", "median_dBm", "energy_dBm",
           "worst_slack")
FEAS_TOL = 1e-5


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    algorithms: tuple
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown axis '{self.axis}', expected one of {AXES}")
        vals = tuple(np.atleast_1d(self.values).tolist()) if not isinstance(self.values, tuple) else self.values
        algs = (self.algorithms,) if isinstance(self.algorithms, str) else tuple(self.algorithms)
        if not vals or not algs:
            raise ConfigError("values and algorithms must be non-empty")
        bad = [a for a in algs if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithms {bad}")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "algorithms", algs)
        object.__setattr__(self, "trials", int(self.trials))
        object.__setattr__(self, "seed", int(self.seed))


def load_sweep(path: str | Path, base: ScenarioConfig) -> tuple[SweepSpec, ScenarioConfig]:
    """A sweep file holds axis/values/algorithms/trials/seed; other keys override the config."""
    d = parse_key_values(Path(path).read_text())
    keys = ("axis", "values", "algorithms", "trials", "seed")
    spec = SweepSpec(**{k: d.pop(k) for k in keys if k in d})
    return spec, config_from_dict(d, base)


def apply_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "gamma_db":
        return replace(cfg, gamma=float(db2pow(value)), r_min=None)
    if axis == "q_dbm":
        return replace(cfg, q_dc=float(dbm2watt(value)))
    if axis in ("M", "N", "T"):
        return replace(cfg, **{axis: int(value)})
    if axis == "distance":
        # slide the PR cluster along the ST -> PR-centre direction
        st, pr = np.asarray(cfg.st, float), np.asarray(cfg.pr_center, float)
        u = (pr - st) / np.linalg.norm(pr - st)
        return replace(cfg, pr_center=tuple((st + float(value) * u).tolist()))
    if axis == "eps2":
        return replace(cfg, eps2=float(value))
    if axis == "F":
        return replace(cfg, discrete_levels=int(value))
    raise ConfigError(f"unknown axis '{axis}'")


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def make_instance(cfg: ScenarioConfig, seed: int) -> tuple[ChannelSet, PrimaryPrecoder]:
    rng = np.random.default_rng(seed)
    ch = synthesize(cfg, place_nodes(cfg, rng), rng)
    return ch, zf_primary_precoder(ch, cfg)


def _rng(seed, name):
    return np.random.default_rng([seed, ALGORITHMS.index(name) if name in ALGORITHMS else 99])


def _p3_design(ch, f, cfg, ups, t0, **info) -> DesignSolution:
    inst = build_instance(ch, f, cfg)
    try:
        W, rho = p3(inst, ups)
    except SubproblemInfeasible as exc:
        raise Infeasible(str(exc)) from exc
    w = np.array([extract_beamformer(Wk, 1.0) for Wk in W])
    sol = DesignSolution(inst.to_physical(w), rho, ReflectVector(ups), inst.tau_bar,
                         outer_iters=1, rank_residual=float(max(_rank(Wk) for Wk in W)))
    sol.trace = [sol.objective]
    sol.feasibility = check_feasibility(ch, sol, f, cfg, inst.tau_bar)
    sol.info.update(runtime=time.perf_counter() - t0, **info)
    return sol


def _rank(W):
    lam = np.linalg.eigvalsh(W)
    return float(lam[-2] / lam[-1]) if lam.size > 1 and lam[-1] > 0 else 0.0


@lru_cache(maxsize=64)
def _continuous_bcd(cfg: ScenarioConfig, seed: int) -> DesignSolution:
    ch, f = make_instance(cfg, seed)
    return bcd_solve(ch, f, cfg, rng=_rng(seed, "BCD"))


def quantized_design(ch, f, cfg, sol: DesignSolution, F: int, circular=True) -> DesignSolution:
    """Quantize the reflect phases of ``sol`` and re-solve the beamforming SDP there.

    ``info['kept_margin']`` is the worst relative slack of the original
    (w, rho) re-evaluated at the quantized phases.
    """
    t0 = time.perf_counter()
    q = quantize_phases(sol.upsilon, F, circular)
    kept = DesignSolution(sol.w, sol.rho, q, sol.tau_bar)
    margin = check_feasibility(ch, kept, f, cfg, sol.tau_bar).worst()
    out = _p3_design(ch, f, cfg, q.upsilon, t0, kept_margin=margin, levels=F)
    return out


def run_benchmark(mode: str, ch: ChannelSet, f: PrimaryPrecoder, cfg: ScenarioConfig,
                  rng=None, seed=None) -> DesignSolution:
    """Solve one instance with a named scheme."""
    rng = np.random.default_rng() if rng is None else rng
    t0 = time.perf_counter()
    N = ch.dims["N"]
    if mode == "AM":
        return am_solve(ch, f, cfg, rng=rng)
    if mode == "BCD":
        return bcd_solve(ch, f, cfg, rng=rng)
    if mode == "Robust":
        spec = OutageSpec.uniform(cfg.K, cfg.U, cfg.outage)
        model = CsiErrorModel.relative(ch, cfg.eps2)
        return robust_solve(ch, f, cfg, spec, model, rng=rng, omega_r=cfg.omega_r, omega_e=cfg.omega_e)
    if mode == "RandomRB":
        return _p3_design(ch, f, cfg, ReflectVector.random(N, rng).upsilon, t0)
    if mode == "NoIRS":
        return _p3_design(ch.without_irs(), f, cfg, np.ones(N, dtype=complex), t0)
    if mode == "Isolated":
        iso = replace(cfg, e_iet=np.inf)
        return bcd_solve(ch, PrimaryPrecoder.zeros(*f.f.shape), iso, rng=rng)
    if mode == "Quantized-F":
        F = cfg.discrete_levels or 4
        base = replace(cfg, discrete_levels=None)
        cont = _continuous_bcd(base, seed) if seed is not None else bcd_solve(ch, f, cfg, rng=rng)
        return quantized_design(ch, f, cfg, cont, F)
    raise ConfigError(f"unknown benchmark '{mode}'")


# ---- sweeps ------------------------------------------------------------------

def _fmt(x, nd=6):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return f"{x:.{nd}g}" if isinstance(x, float) else str(x)


def run_trial(axis, value, algorithm, trial, cfg: ScenarioConfig, seed: int) -> dict:
    cfg_v = apply_axis(cfg, axis, value)
    ts = trial_seed(seed, trial)
    row = dict(axis=axis, value=value, algorithm=algorithm, trial=trial, seed=ts)
    t0 = time.perf_counter()
    try:
        ch, f = make_instance(cfg_v, ts)
        sol = run_benchmark(algorithm, ch, f, cfg_v, rng=_rng(ts, algorithm), seed=ts)
    except Infeasible:
        row.update(status="infeasible", feasible=0)
        return row
    except (UnderlayError, ValueError, np.linalg.LinAlgError) as exc:
        row.update(status=f"error:{type(exc).__name__}", feasible=0)
        return row
    rep = sol.feasibility or check_feasibility(ch, sol, f, cfg_v, sol.tau_bar)
    ok = rep.ok(FEAS_TOL)
    worst = sol.info.get("kept_margin", rep.worst())
    row.update(objective_dBm=float(watt2dbm(sol.power)), feasible=int(ok),
               outer_iters=sol.outer_iters, inner_iters=sol.inner_iters,
               runtime_ms=1e3 * (time.perf_counter() - t0), rank_residual=sol.rank_residual,
               status="ok" if ok else "violated", energy_dBm=float(watt2dbm(sol.objective)),
               worst_slack=float(worst))
    return row


def _run_one(args):
    return run_trial(*args)


def aggregate(rows: list, axis, value, algorithm) -> dict:
    sel = [r for r in rows if r["value"] == value and r["algorithm"] == algorithm]
    good = [r for r in sel if r.get("feasible") == 1]
    lin = np.array([dbm2watt(r["objective_dBm"]) for r in good])
    eng = np.array([dbm2watt(r["energy_dBm"]) for r in good])
    out = dict(axis=axis, value=value, algorithm=algorithm, trial="all", seed="",
               feasible=len(good) / len(sel) if sel else 0.0, status="aggregate")
    if lin.size:
        out.update(objective_dBm=float(watt2dbm(lin.mean())), median_dBm=float(watt2dbm(np.median(lin))),
                   energy_dBm=float(watt2dbm(eng.mean())),
                   outer_iters=float(np.mean([r["outer_iters"] for r in good])),
                   inner_iters=float(np.mean([r["inner_iters"] for r in good])),
                   rank_residual=float(max(r["rank_residual"] for r in good)),
                   worst_slack=float(np.mean([r["worst_slack"] for r in sel if "worst_slack" in r])))
        if all("runtime_ms" in r for r in good):
            out["runtime_ms"] = float(np.mean([r["runtime_ms"] for r in good]))
    return out


def run_sweep(spec: SweepSpec, cfg: ScenarioConfig, workers: int = 1, timing=True) -> list:
    """All rows of a sweep: per-trial rows then one aggregate row per (value, algorithm).

    Rows come out ordered by (value, algorithm, trial) whatever the pool
    completion order.  With ``timing=False`` runtimes are blanked so that
    equal seeds give byte-identical CSV.
    """
    jobs = [(spec.axis, v, a, t, cfg, spec.seed)
            for v in spec.values for a in spec.algorithms for t in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    if not timing:
        for r in rows:
            r.pop("runtime_ms", None)
    out = []
    for v in spec.values:
        for a in spec.algorithms:
            block = [r for r in rows if r["value"] == v and r["algorithm"] == a]
            out.extend(sorted(block, key=lambda r: r["trial"]))
            agg = aggregate(block, spec.axis, v, a)
            if not timing:
                agg.pop("runtime_ms", None)
            out.append(agg)
    return out


def rows_to_csv(rows: list, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(COLUMNS)
    for r in rows:
        wr.writerow([_fmt(r.get(c)) if isinstance(r.get(c), float) else
                     ("" if r.get(c) is None else str(r.get(c))) for c in COLUMNS])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(path: str | Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sweep_means(rows: list) -> dict:
    """(value, algorithm) -> mean objective in dBm from the aggregate rows."""
    out = {}
    for r in rows:
        if r.get("trial") == "all" and r.get("objective_dBm") not in (None, ""):
            out[(r["value"], r["algorithm"])] = float(r["objective_dBm"])
    return out
