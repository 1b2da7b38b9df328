"""Command line: solve one instance, run a sweep, or validate robust designs."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .channel import CsiErrorModel
from .errors import Infeasible, UnderlayError
from .harness import (ALGORITHMS, AXES, SweepSpec, load_sweep, make_instance, run_benchmark,
                      run_sweep, rows_to_csv, _rng)
from .robust import OutageSpec, fixed_ps_ratios, outage_monte_carlo, robust_solve
from .am import am_solve
from .scenario import desk_config, load_config, full_config, watt2dbm


def _config(args):
    base = full_config() if args.preset == "full" else desk_config()
    return load_config(args.config, base) if args.config else base


def cmd_solve(args) -> int:
    cfg = _config(args)
    ch, f = make_instance(cfg, args.seed)
    try:
        sol = run_benchmark(args.algorithm, ch, f, cfg, rng=_rng(args.seed, args.algorithm), seed=args.seed)
    except Infeasible as exc:
        print(f"infeasible: {exc}")
        return 0
    rep = sol.feasibility
    print(f"algorithm      {args.algorithm}")
    print(f"seed           {args.seed}")
    print(f"sum power      {watt2dbm(sol.power):.3f} dBm")
    print(f"objective      {watt2dbm(sol.objective):.3f} dBm  (tau_bar = {sol.tau_bar:.4f})")
    print(f"PS ratios      {np.array2string(np.asarray(sol.rho), precision=4)}")
    print(f"iterations     outer {sol.outer_iters}, inner {sol.inner_iters}")
    print(f"rank residual  {sol.rank_residual:.2e}")
    print(f"stop           {sol.info.get('stop', '-')}")
    print(f"runtime        {1e3 * sol.info.get('runtime', float('nan')):.0f} ms")
    for name, val in rep.slacks.items():
        if np.size(val):
            print(f"slack {name:<8} min {np.min(val):+.3e}")
    print("feasible" if rep.ok(1e-5) else "VIOLATED: " + ",".join(rep.violated(1e-5)))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.spec:
        spec, cfg = load_sweep(args.spec, cfg)
    else:
        if not (args.axis and args.values):
            print("sweep needs a spec file or --axis and --values", file=sys.stderr)
            return 2
        spec = SweepSpec(args.axis, tuple(float(v) for v in args.values.split(",")),
                         tuple(args.algorithms.split(",")))
    kw = {}
    if args.trials is not None:
        kw["trials"] = args.trials
    if args.seed is not None:
        kw["seed"] = args.seed
    if kw:
        spec = SweepSpec(**{**spec.__dict__, **kw})
    rows = run_sweep(spec, cfg, workers=args.workers, timing=not args.no_timing)
    text = rows_to_csv(rows, args.output)
    if args.output is None:
        sys.stdout.write(text)
    else:
        bad = sum(1 for r in rows if r["trial"] != "all" and r.get("status") != "ok")
        print(f"wrote {len(rows)} rows to {args.output} ({bad} trials infeasible or failed)")
    return 0


def cmd_validate(args) -> int:
    cfg = _config(args)
    eps2 = cfg.eps2 if args.eps2 is None else args.eps2
    spec = OutageSpec.uniform(cfg.K, cfg.U, cfg.outage)
    rho = fixed_ps_ratios(cfg, cfg.omega_r, cfg.omega_e)
    print("trial robust_max_outage robust_ok nonrobust_max_outage nonrobust_ok")
    for t in range(args.trials):
        seed = args.seed + t
        ch, f = make_instance(cfg, seed)
        model = CsiErrorModel.relative(ch, eps2)
        cells = [str(t)]
        for name, solve in (("robust", lambda: robust_solve(ch, f, cfg, spec, model, rng=_rng(seed, "Robust"))),
                            ("nonrobust", lambda: am_solve(ch, f, cfg, rng=_rng(seed, "AM"), rho_fixed=rho))):
            try:
                sol = solve()
            except Infeasible:
                cells += ["infeasible", "-"]
                continue
            rep = outage_monte_carlo(ch, sol, f, cfg, model, np.random.default_rng([seed, 7]), n=args.draws)
            worst = max(float(np.max(v)) for v in rep.rates.values() if np.size(v))
            cells += [f"{worst:.4f}", str(rep.within(spec))]
        print(" ".join(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irs-underlay", description=__doc__)
    p.add_argument("--config", help="key = value file overriding the preset")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one seeded instance and print a report")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--algorithm", choices=ALGORITHMS, default="BCD")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="run a parameter sweep and write CSV")
    s.add_argument("spec", nargs="?", help="sweep file (axis, values, algorithms, trials, seed, overrides)")
    s.add_argument("--axis", choices=AXES)
    s.add_argument("--values", help="comma separated axis values")
    s.add_argument("--algorithms", default="BCD")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("-o", "--output")
    s.add_argument("--no-timing", action="store_true", help="omit runtimes (byte-identical reruns)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("validate", help="Monte-Carlo outage check of robust and non-robust designs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--eps2", type=float)
    s.add_argument("--draws", type=int, default=10_000)
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UnderlayError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
