"""Command line for planning, equilibrium, diffusion and simulation runs.

Exit status: 0 on success, 2 when a modelling assumption fails (load not
subcritical, or the equilibrium not strictly positive with all but the last
pool full), 1 on any other error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .errors import AssumptionViolated, LapsimError, PartialReport
from .harness import (DEFAULT_NU, DEFAULT_R, Prepared, convergence_metrics, descent_experiment,
                      emit_report, run_sweep)
from .lap import check_assumption3
from .model import load_spec
from .planner import check_crp
from .simulator import scaled_deviation, simulate_stationary, SimState

log = logging.getLogger("lapsim")


def _dump(obj, args, name):
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text + "\n")


def cmd_plan(args):
    prep = Prepared.from_spec(load_spec(args.spec))
    crp = check_crp(prep.spec, prep.spp, args.tol)
    _dump({
        "rho": prep.spp.rho,
        "flows": [{"i": i + 1, "j": j + 1, "flow": f}
                  for (i, j), f in zip(prep.spec.edges, prep.spp.flows)],
        "pool_loads": list(prep.spp.pool_loads),
        "crp": crp.to_dict(),
    }, args, "plan")
    return 0 if crp.rho_subcritical else 2


def cmd_equilibrium(args):
    prep = Prepared.from_spec(load_spec(args.spec))
    a3 = check_assumption3(prep.eq)
    _dump({
        "priorities": prep.pa.to_dict(prep.spec),
        "equilibrium": prep.eq.to_dict(prep.spec),
        "assumption3": {
            "passed": a3.passed,
            "zero_edges": [[prep.spec.edges[k][0] + 1, prep.spec.edges[k][1] + 1] for k in a3.zero_edges],
            "unfilled_pools": [j + 1 for j in a3.unfilled_pools],
            "last_pool_full": a3.last_pool_full,
        },
    }, args, "equilibrium")
    return 0 if a3.passed else 2


def cmd_diffusion(args):
    prep = Prepared.from_spec(load_spec(args.spec))
    check_assumption3(prep.eq).raise_if_failed(prep.spec)
    _dump(prep.diffusion().to_dict(prep.spec), args, "diffusion")
    return 0


def cmd_simulate(args):
    prep = Prepared.from_spec(load_spec(args.spec))
    prep.require_assumptions()
    r = args.r[0]
    st = simulate_stationary(prep.spec, prep.pa, prep.eq, r, args.horizon, args.burn_in,
                             args.seed, args.batches, empty_start=args.empty_start,
                             sample_dt=args.sample_dt)
    _dump(st.to_dict(prep.spec), args, "simulate")
    if st.samples is not None:
        if not args.out:
            log.warning("--sample-dt given without --out; time series not written")
        else:
            _write_series(Path(args.out) / "timeseries.csv", st, prep, r)
    return 0


def _write_series(path, st, prep, r):
    spec = prep.spec
    header = ["t"] + [f"psi_hat_{i + 1}_{j + 1}" for i, j in spec.edges]
    header += [f"q_hat_{i + 1}" for i in range(spec.num_classes)]
    header += [f"z_hat_{j + 1}" for j in range(spec.num_pools)]
    n_edge = spec.num_edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, row in enumerate(st.samples):
            s = SimState.from_counts(spec, r, row[:n_edge], row[n_edge:])
            p, q, z = scaled_deviation(s, spec, prep.eq)
            w.writerow([repr(k * st.sample_dt)] + [repr(float(v)) for v in (*p, *q, *z)])


def cmd_sweep(args):
    spec = load_spec(args.spec)
    try:
        report = run_sweep(spec, args.r or DEFAULT_R, horizon=args.horizon, burn_in=args.burn_in,
                           batches=args.batches, replicas=args.replicas, seed=args.seed,
                           nu=args.nu)
        status = 0
    except PartialReport as exc:
        log.error("%s: %s", exc, exc.failures)
        report, status = exc.report, 1
    out = {"report": report.to_dict(), "summary": convergence_metrics(report) if report.rows else {}}
    print(json.dumps(out, indent=2, sort_keys=True))
    if args.out:
        emit_report(report, args.out)
        Path(args.out, "summary.json").write_text(
            json.dumps(out["summary"], indent=2, sort_keys=True) + "\n")
    return status


def cmd_descent(args):
    spec = load_spec(args.spec)
    rows = []
    for r in args.r or (400,):
        rep = descent_experiment(spec, r, args.eps, replicas=args.replicas, c=args.c,
                                 window_factor=args.window_factor, seed=args.seed)
        rows.append(rep.to_dict())
    _dump({"runs": rows}, args, "descent")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lapsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--spec", required=True, help="system description (JSON)")
        sp.add_argument("--out", help="directory for output files")
        sp.set_defaults(func=func)
        return sp

    sp = add("plan", cmd_plan, "solve the static planning LP and check CRP")
    sp.add_argument("--tol", type=float, default=1e-9)
    add("equilibrium", cmd_equilibrium, "LAP priorities and equilibrium point")
    add("diffusion", cmd_diffusion, "limiting OU drift, noise and covariances")

    def sim_opts(sp, r_default):
        sp.add_argument("--r", type=int, nargs="+", default=r_default)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--horizon", type=float, default=2000.0)
        sp.add_argument("--burn-in", type=float, default=None)
        sp.add_argument("--batches", type=int, default=20)

    sp = add("simulate", cmd_simulate, "one stationary run at scale r")
    sim_opts(sp, [400])
    sp.add_argument("--empty-start", action="store_true")
    sp.add_argument("--sample-dt", type=float, default=None,
                    help="also write timeseries.csv sampled every DT (needs --out)")
    sp = add("sweep", cmd_sweep, "stationary runs over several r")
    sim_opts(sp, list(DEFAULT_R))
    sp.add_argument("--replicas", type=int, default=4)
    sp.add_argument("--nu", type=float, default=DEFAULT_NU)
    sp = add("descent", cmd_descent, "hitting-time experiment from a displaced start")
    sp.add_argument("--r", type=int, nargs="+", default=[400])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--eps", type=float, default=0.25)
    sp.add_argument("--c", type=float, default=5.0)
    sp.add_argument("--window-factor", type=float, default=5.0)
    sp.add_argument("--replicas", type=int, default=50)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AssumptionViolated as exc:
        log.error("assumption violated: %s", exc)
        return 2
    except (LapsimError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
