"""Scaling sweeps over ``r``, convergence summaries, hitting-time
experiments and report files."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernel as K
from .diffusion import DiffusionModel, build_model
from .errors import AssumptionViolated, EmptyReport, IoError, PartialReport
from .lap import EquilibriumPoint, PriorityAssignment, assign_priorities, check_assumption3, compute_equilibrium
from .model import SystemSpec
from .planner import SppSolution, solve_spp
from .simulator import SimState, StationaryStats, policy_tables, simulate_stationary

DEFAULT_R = (100, 400, 1600)
DEFAULT_NU = 0.25
CSV_FIELDS = ("r", "metric", "index", "value", "se")


@dataclass(frozen=True)
class Prepared:
    """Everything derived from a spec before simulating."""

    spec: SystemSpec
    spp: SppSolution
    pa: PriorityAssignment
    eq: EquilibriumPoint

    @classmethod
    def from_spec(cls, spec: SystemSpec) -> "Prepared":
        pa = assign_priorities(spec)
        return cls(spec, solve_spp(spec), pa, compute_equilibrium(spec, pa))

    def require_assumptions(self):
        if not self.spp.rho < 1.0:
            raise AssumptionViolated(f"load rho = {self.spp.rho:.6g} is not subcritical")
        check_assumption3(self.eq).raise_if_failed(self.spec)

    def diffusion(self) -> DiffusionModel:
        return build_model(self.spec, self.pa, self.eq)


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("LAPSIM_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


def replica_seed(seed: int, r: int, rep: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(int(r), int(rep)))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class SweepRow:
    r: int
    seeds: list
    n_events: int
    runtime: float
    cov: np.ndarray
    cov_se: np.ndarray
    rel_frob_err: float
    rel_frob_err_se: float
    mean_q_hat: np.ndarray
    mean_q_hat_se: np.ndarray
    mean_z_hat: np.ndarray
    mean_z_hat_se: np.ndarray
    mean_q_nu: np.ndarray
    mean_q_nu_se: np.ndarray
    mean_z_nu: np.ndarray
    mean_z_nu_se: np.ndarray


@dataclass
class SweepReport:
    edges: list
    idle_pools: list
    sigma_psi: np.ndarray
    nu: float
    config: dict
    rows: list = field(default_factory=list)

    def row(self, r: int) -> SweepRow:
        return next(x for x in self.rows if x.r == r)

    def to_dict(self, timing: bool = False) -> dict:
        rows = []
        for x in self.rows:
            d = {
                "r": x.r,
                "seeds": [str(s) for s in x.seeds],
                "events": x.n_events,
                "cov_psi_hat": x.cov.tolist(),
                "cov_psi_hat_se": x.cov_se.tolist(),
                "rel_frob_err": x.rel_frob_err,
                "rel_frob_err_se": x.rel_frob_err_se,
                "mean_q_hat": x.mean_q_hat.tolist(),
                "mean_q_hat_se": x.mean_q_hat_se.tolist(),
                "mean_abs_z_hat": x.mean_z_hat.tolist(),
                "mean_abs_z_hat_se": x.mean_z_hat_se.tolist(),
                "mean_q_nu": x.mean_q_nu.tolist(),
                "mean_q_nu_se": x.mean_q_nu_se.tolist(),
                "mean_abs_z_nu": x.mean_z_nu.tolist(),
                "mean_abs_z_nu_se": x.mean_z_nu_se.tolist(),
            }
            if timing:
                d["runtime_s"] = x.runtime
            rows.append(d)
        return {
            "edges": self.edges,
            "idle_pools": self.idle_pools,
            "sigma_psi": self.sigma_psi.tolist(),
            "nu": self.nu,
            "config": self.config,
            "rows": rows,
        }


def relative_frobenius_error(cov, cov_se, target):
    """``|cov - target|_F / |target|_F`` and its delta-method standard error
    (entries treated as independent)."""
    diff = cov - target
    scale = np.linalg.norm(target)
    err = np.linalg.norm(diff) / scale
    if err == 0.0:
        return 0.0, float(np.linalg.norm(cov_se) / scale)
    grad = diff / (np.linalg.norm(diff) * scale)
    return float(err), float(np.sqrt(np.sum((grad * cov_se) ** 2)))


def _replica(args):
    spec, pa, eq, r, horizon, burn_in, seed, batches = args
    t0 = time.perf_counter()
    st = simulate_stationary(spec, pa, eq, r, horizon, burn_in, seed, batches, check=False)
    return st, time.perf_counter() - t0


def run_sweep(spec: SystemSpec, r_list, *, horizon: float = 2000.0, burn_in: float | None = None,
              batches: int = 20, replicas: int = 4, seed: int = 0, nu: float = DEFAULT_NU,
              workers: int | None = None) -> SweepReport:
    """Simulate every ``r`` in ``r_list`` with ``replicas`` independent seeds
    and compare the pooled statistics with the diffusion limit."""
    prep = Prepared.from_spec(spec)
    prep.require_assumptions()
    model = prep.diffusion()
    if burn_in is None:
        slowest = float(np.min(np.abs(model.eigenvalues.real)))
        burn_in = max(100.0, 20.0 / slowest)
    r_list = sorted(int(r) for r in r_list)
    report = SweepReport(
        edges=[[i + 1, j + 1] for i, j in spec.edges],
        idle_pools=[j + 1 for j in range(spec.num_pools) if j != prep.eq.last_pool],
        sigma_psi=model.Sigma_Psi,
        nu=nu,
        config={"horizon": horizon, "burn_in": burn_in, "batches": batches,
                "replicas": replicas, "seed": seed, "r": r_list},
    )
    tasks = [(r, rep) for r in r_list for rep in range(replicas)]
    jobs = [(spec, prep.pa, prep.eq, r, horizon, burn_in, replica_seed(seed, r, rep), batches)
            for r, rep in tasks]
    n_workers = worker_count(len(jobs)) if workers is None else max(1, workers)
    results, failures = {}, []
    if n_workers == 1:
        for key, job in zip(tasks, jobs):
            try:
                results[key] = _replica(job)
            except Exception as exc:  # noqa: BLE001 - reported via PartialReport
                failures.append((key, repr(exc)))
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            futures = {key: pool.submit(_replica, job) for key, job in zip(tasks, jobs)}
            for key, fut in futures.items():
                try:
                    results[key] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    failures.append((key, repr(exc)))

    for r in r_list:
        done = [results[(r, rep)] for rep in range(replicas) if (r, rep) in results]
        if done:
            report.rows.append(_make_row(r, done, model, nu))
    if failures:
        raise PartialReport(f"{len(failures)} replica(s) failed", report, failures)
    return report


def _make_row(r, done, model, nu) -> SweepRow:
    st = StationaryStats.pooled([s for s, _ in done])
    err, err_se = relative_frobenius_error(st.cov, st.cov_se, model.Sigma_Psi)
    q_hat, q_hat_se = st.queue_scaled(0.5)
    z_hat, z_hat_se = st.idle_scaled(0.5)
    q_nu, q_nu_se = st.queue_scaled(nu)
    z_nu, z_nu_se = st.idle_scaled(nu)
    return SweepRow(
        r=r, seeds=st.seeds, n_events=st.n_events, runtime=sum(t for _, t in done),
        cov=st.cov, cov_se=st.cov_se, rel_frob_err=err, rel_frob_err_se=err_se,
        mean_q_hat=q_hat, mean_q_hat_se=q_hat_se, mean_z_hat=z_hat, mean_z_hat_se=z_hat_se,
        mean_q_nu=q_nu, mean_q_nu_se=q_nu_se, mean_z_nu=z_nu, mean_z_nu_se=z_nu_se,
    )


def _metric_series(report: SweepReport):
    """``name -> (values, ses)`` for every tracked metric, ordered by r."""
    rows = report.rows
    out = {"rel_frob_err": ([x.rel_frob_err for x in rows], [x.rel_frob_err_se for x in rows])}
    n_cls = len(rows[0].mean_q_nu)
    for i in range(n_cls):
        out[f"mean_q_nu[{i + 1}]"] = ([x.mean_q_nu[i] for x in rows], [x.mean_q_nu_se[i] for x in rows])
    for k, j in enumerate(report.idle_pools):
        out[f"mean_abs_z_nu[{j}]"] = ([x.mean_z_nu[k] for x in rows], [x.mean_z_nu_se[k] for x in rows])
    return out


def convergence_metrics(report: SweepReport, n_se: float = 2.0) -> dict:
    """Per metric: values, final value and a verdict.

    ``converging``: never rises by more than ``n_se`` combined standard
    errors between consecutive r, and falls by more than that overall.
    ``non-monotone``: some rise exceeds the noise band.
    ``inconclusive``: neither; the change is within noise.
    A single row gets no verdict (``None``).
    """
    if not report.rows:
        raise EmptyReport("sweep report has no rows")
    summary = {}
    for name, (vals, ses) in _metric_series(report).items():
        vals = [float(v) for v in vals]
        ses = [0.0 if not math.isfinite(s) else float(s) for s in ses]
        verdict = None
        if len(vals) >= 2:
            band = [n_se * math.hypot(ses[k], ses[k + 1]) for k in range(len(vals) - 1)]
            rises = [vals[k + 1] - vals[k] > band[k] for k in range(len(vals) - 1)]
            if any(rises):
                verdict = "non-monotone"
            elif vals[0] - vals[-1] > n_se * math.hypot(ses[0], ses[-1]):
                verdict = "converging"
            else:
                verdict = "inconclusive"
        summary[name] = {"values": vals, "se": ses, "final": vals[-1], "verdict": verdict}
    return summary


@dataclass
class DescentReport:
    r: int
    eps: float
    displacement: int
    threshold: float
    window: float
    stay_bound: float
    hit_times: np.ndarray  # nan where the threshold was not reached
    max_after: np.ndarray  # max |F| over the window after the hit
    seeds: list

    @property
    def hit_frequency(self) -> float:
        return float(np.mean(np.isfinite(self.hit_times)))

    @property
    def stay_frequency(self) -> float:
        """Fraction of replicas that hit and then stayed below ``stay_bound``."""
        return float(np.mean(np.isfinite(self.hit_times) & (self.max_after <= self.stay_bound)))

    @property
    def mean_hit_over_log_r(self) -> float:
        hits = self.hit_times[np.isfinite(self.hit_times)]
        return float(hits.mean() / math.log(self.r)) if hits.size else math.nan

    @property
    def hit_over_log_r_se(self) -> float:
        hits = self.hit_times[np.isfinite(self.hit_times)]
        if hits.size < 2:
            return math.nan
        return float(hits.std(ddof=1) / math.sqrt(hits.size) / math.log(self.r))

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "eps": self.eps,
            "displacement": self.displacement,
            "threshold": self.threshold,
            "window": self.window,
            "stay_bound": self.stay_bound,
            "replicas": len(self.hit_times),
            "hit_frequency": self.hit_frequency,
            "stay_frequency": self.stay_frequency,
            "mean_hit_time_over_log_r": self.mean_hit_over_log_r,
            "hit_times": [None if not math.isfinite(h) else h for h in self.hit_times.tolist()],
            "seeds": [str(s) for s in self.seeds],
        }


def displaced_state(prep: Prepared, r: int, n_extra: int) -> SimState:
    """Equilibrium state plus ``n_extra`` customers of the lowest-priority
    class, each placed by the routing rule (idle server if any, else queue)."""
    spec, pa = prep.spec, prep.pa
    tab = policy_tables(spec, pa)
    st = SimState.near_equilibrium(spec, pa, prep.eq, r)
    busy = st.busy(spec)
    cls = pa.class_order[-1]
    for _ in range(n_extra):
        K.apply_event(cls, st.psi, st.q, busy, st.cap, tab.route, tab.sched,
                      tab.edge_cls, tab.edge_pool)
    return st


def descent_experiment(spec: SystemSpec, r: int, eps: float = 0.25, *, replicas: int = 50,
                       c: float = 5.0, window_factor: float = 5.0, displacement: int | None = None,
                       seed: int = 0) -> DescentReport:
    """Start ``replicas`` runs displaced by about ``r**(1/2 + eps)`` and record
    when ``|F| = |(psi - psi* r, q)|`` first drops to ``c sqrt(r)`` within
    ``window_factor * log r``, and its maximum over the same length after that."""
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    prep = Prepared.from_spec(spec)
    prep.require_assumptions()
    if displacement is None:
        displacement = math.ceil(r ** (0.5 + eps))
    tab = policy_tables(spec, prep.pa)
    window = window_factor * math.log(r)
    start = displaced_state(prep, r, displacement)
    psi_center = np.asarray(prep.eq.occupancy) * r
    thr = c * math.sqrt(r)
    hits = np.full(replicas, np.nan)
    max_after = np.full(replicas, np.nan)
    seeds = []
    for rep in range(replicas):
        s = replica_seed(seed, r, rep)
        seeds.append(s)
        rng = np.random.Generator(np.random.PCG64(s))
        st = start.copy()
        busy = st.busy(spec)
        t, t_end, hit, mx = 0.0, window, -1.0, 0.0
        while t < t_end:
            t, t_end, _, hit, mx = K.run_descent(
                t, t_end, rng.random(1 << 16), st.psi, st.q, busy, st.cap, tab.lam * r,
                tab.mu, tab.route, tab.sched, tab.edge_cls, tab.edge_pool, psi_center,
                thr * thr, hit, window, mx,
            )
        if hit >= 0:
            hits[rep] = hit
            max_after[rep] = math.sqrt(mx)
    return DescentReport(r, eps, displacement, thr, window, r ** (0.5 + eps), hits, max_after, seeds)


def _csv_rows(report: SweepReport):
    n_edge = len(report.edges)
    labels = [f"{i}-{j}" for i, j in report.edges]
    for x in report.rows:
        yield (x.r, "rel_frob_err", "", x.rel_frob_err, x.rel_frob_err_se)
        for a in range(n_edge):
            for b in range(a, n_edge):
                yield (x.r, "cov_psi_hat", f"{labels[a]}|{labels[b]}", x.cov[a, b], x.cov_se[a, b])
        for i in range(len(x.mean_q_hat)):
            yield (x.r, "mean_q_hat", str(i + 1), x.mean_q_hat[i], x.mean_q_hat_se[i])
            yield (x.r, "mean_q_nu", str(i + 1), x.mean_q_nu[i], x.mean_q_nu_se[i])
        for k, j in enumerate(report.idle_pools):
            yield (x.r, "mean_abs_z_hat", str(j), x.mean_z_hat[k], x.mean_z_hat_se[k])
            yield (x.r, "mean_abs_z_nu", str(j), x.mean_z_nu[k], x.mean_z_nu_se[k])


def emit_report(report: SweepReport, path, fmt: str = "both", stem: str = "sweep") -> list[Path]:
    """Write ``<stem>.csv`` (long format: r, metric, index, value, se) and/or
    ``<stem>.json``.  Runtimes go to ``<stem>_timing.json`` so that the main
    JSON depends only on the configuration."""
    out = Path(path)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            p = out / f"{stem}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(CSV_FIELDS)
                for r, metric, idx, val, se in _csv_rows(report):
                    w.writerow((r, metric, idx, repr(float(val)), repr(float(se))))
            written.append(p)
        if fmt in ("json", "both"):
            p = out / f"{stem}.json"
            p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
            written.append(p)
            p = out / f"{stem}_timing.json"
            p.write_text(json.dumps({str(x.r): x.runtime for x in report.rows}, indent=2) + "\n")
            written.append(p)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return written
