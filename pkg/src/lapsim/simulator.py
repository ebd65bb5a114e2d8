"""Event-driven simulation of the ``r``-th system under LAP.

The chain is simulated Gillespie-style: one exponential holding time at the
total rate, then one event chosen with probability proportional to its rate.
Randomness comes from a numpy ``Generator(PCG64(seed))``; uniforms are drawn
in fixed-size chunks and handed to the compiled kernel, so a given seed
always yields the same trajectory.  Holding times use the inverse CDF
``-log(1 - u) / rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import _kernel as K
from .errors import AssumptionViolated, InvalidHorizon, RateOverflow
from .lap import EquilibriumPoint, PriorityAssignment, check_assumption3
from .model import SystemSpec

CHUNK = 1 << 18  # uniforms per kernel call
QUEUE = None  # route_arrival result when no pool has room
IDLE = None  # schedule_completion result when no queue is waiting

_TAGS = {K.TAG_ROUTED: "routed", K.TAG_QUEUED: "queued", K.TAG_IDLE: "idle",
         K.TAG_TRANSFER: "transfer"}


def pool_capacity(beta: float, r: int) -> int:
    # guard against products like 0.29 * 100 = 28.999999999999996
    return int(math.floor(beta * r * (1.0 + 1e-12)))


@dataclass(frozen=True)
class PolicyTables:
    """Spec + priorities flattened into arrays for the compiled kernel."""

    edge_cls: np.ndarray
    edge_pool: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    beta: np.ndarray
    route: np.ndarray
    sched: np.ndarray


@lru_cache(maxsize=64)
def policy_tables(spec: SystemSpec, pa: PriorityAssignment) -> PolicyTables:
    lam, beta, edge_cls, edge_pool, mu = spec.arrays()
    width = max(max(len(s) for s in spec.servers_of), max(len(c) for c in spec.classes_of))
    route = np.full((spec.num_classes, width), -1, dtype=np.int64)
    sched = np.full((spec.num_pools, width), -1, dtype=np.int64)
    for i, pools in enumerate(spec.servers_of):
        ks = sorted((spec.edge_index(i, j) for j in pools), key=pa.edge_priority.__getitem__)
        route[i, : len(ks)] = ks
    for j, classes in enumerate(spec.classes_of):
        ks = sorted((spec.edge_index(i, j) for i in classes),
                    key=lambda k: pa.class_priority[spec.edges[k][0]])
        sched[j, : len(ks)] = ks
    for arr in (edge_cls, edge_pool, mu, lam, beta, route, sched):
        arr.setflags(write=False)
    return PolicyTables(edge_cls, edge_pool, mu, lam, beta, route, sched)


@dataclass
class SimState:
    """Occupancies ``psi`` (per edge, spec edge order), queues ``q`` (per
    class) and clock ``t`` of the system with scale ``r``."""

    r: int
    psi: np.ndarray
    q: np.ndarray
    t: float
    cap: np.ndarray = field(repr=False)

    @classmethod
    def empty(cls, spec: SystemSpec, r: int) -> "SimState":
        return cls(
            r,
            np.zeros(spec.num_edges, dtype=np.int64),
            np.zeros(spec.num_classes, dtype=np.int64),
            0.0,
            np.array([pool_capacity(b, r) for b in spec.beta], dtype=np.int64),
        )

    @classmethod
    def from_counts(cls, spec: SystemSpec, r: int, psi, q, t: float = 0.0) -> "SimState":
        st = cls.empty(spec, r)
        st.psi[:] = psi
        st.q[:] = q
        st.t = t
        return st

    @classmethod
    def near_equilibrium(cls, spec: SystemSpec, pa: PriorityAssignment,
                         eq: EquilibriumPoint, r: int) -> "SimState":
        """``round(psi* r)`` per edge, filled in priority order up to pool
        capacity; empty queues."""
        st = cls.empty(spec, r)
        room = st.cap.copy()
        for k in pa.edge_order:
            j = spec.edges[k][1]
            n = min(int(round(eq.occupancy[k] * r)), int(room[j]))
            st.psi[k] = n
            room[j] -= n
        return st

    def busy(self, spec: SystemSpec) -> np.ndarray:
        return np.bincount(np.asarray([j for _, j in spec.edges]), weights=self.psi,
                           minlength=spec.num_pools).astype(np.int64)

    def totals(self, spec: SystemSpec) -> np.ndarray:
        """Customers of each class in the system, ``X_i``."""
        x = self.q.copy()
        for (i, _), n in zip(spec.edges, self.psi):
            x[i] += n
        return x

    def copy(self) -> "SimState":
        return replace(self, psi=self.psi.copy(), q=self.q.copy())


def violations(state: SimState, spec: SystemSpec) -> int:
    """Count of broken invariants (sign, capacity, no-starvation)."""
    tab_cls = np.array([i for i, _ in spec.edges], dtype=np.int64)
    tab_pool = np.array([j for _, j in spec.edges], dtype=np.int64)
    return int(K.check_state(state.psi, state.q, state.busy(spec), state.cap, tab_cls, tab_pool))


def route_arrival(state: SimState, i: int, spec: SystemSpec, pa: PriorityAssignment):
    """Pool (0-based) an arriving class-``i`` customer joins, or ``QUEUE``."""
    tab = policy_tables(spec, pa)
    e = K.route_arrival(i, state.busy(spec), state.cap, tab.route, tab.edge_pool)
    return QUEUE if e < 0 else spec.edges[e][1]


def schedule_completion(state: SimState, j: int, spec: SystemSpec, pa: PriorityAssignment):
    """Class (0-based) a freed pool-``j`` server takes from the queue, or ``IDLE``."""
    tab = policy_tables(spec, pa)
    e = K.schedule_completion(j, state.q, tab.sched, tab.edge_cls)
    return IDLE if e < 0 else spec.edges[e][0]


class StepResult(NamedTuple):
    state: SimState
    holding_time: float
    tag: str  # routed / queued / idle / transfer
    event: tuple  # ("arrival", i) or ("completion", (i, j))


def apply_event(state: SimState, event: tuple, spec: SystemSpec,
                pa: PriorityAssignment) -> tuple[SimState, str]:
    """Apply a named event to a copy of ``state``."""
    tab = policy_tables(spec, pa)
    kind, what = event
    ev = what if kind == "arrival" else spec.num_classes + spec.edge_index(*what)
    new = state.copy()
    busy = new.busy(spec)
    tag, _ = K.apply_event(ev, new.psi, new.q, busy, new.cap, tab.route, tab.sched,
                           tab.edge_cls, tab.edge_pool)
    return new, _TAGS[tag]


def step(state: SimState, spec: SystemSpec, pa: PriorityAssignment,
         rng: np.random.Generator) -> StepResult:
    """One jump of the chain: exponential holding time at the total rate
    ``sum_i lam_i r + sum_ij mu_ij psi_ij``, then one event."""
    tab = policy_tables(spec, pa)
    lam_r = tab.lam * state.r
    rate = float(K.total_rate(state.psi, lam_r, tab.mu))
    if not math.isfinite(rate):
        raise RateOverflow(f"total rate {rate!r}")
    u_hold, u_pick = rng.random(2)
    hold = -math.log1p(-u_hold) / rate
    ev = int(K.select_event(u_pick, rate, state.psi, lam_r, tab.mu))
    n_cls = spec.num_classes
    event = ("arrival", ev) if ev < n_cls else ("completion", spec.edges[ev - n_cls])
    new, tag = apply_event(state, event, spec, pa)
    new.t = state.t + hold
    return StepResult(new, hold, tag, event)


def scaled_deviation(state: SimState, spec: SystemSpec, eq: EquilibriumPoint, r: int | None = None):
    """Diffusion-scaled ``(psi_hat, q_hat, z_hat)`` around the equilibrium."""
    r = state.r if r is None else r
    s = math.sqrt(r)
    psi_star = np.asarray(eq.occupancy)
    psi_hat = (state.psi - psi_star * r) / s
    q_hat = state.q / s
    z_center = np.bincount([j for _, j in spec.edges], weights=psi_star, minlength=spec.num_pools)
    z_hat = (state.busy(spec) - r * z_center) / s
    return psi_hat, q_hat, z_hat


@dataclass
class StationaryStats:
    """Time-averaged statistics of one or more stationary runs.

    Deviation moments are for ``psi_hat = (psi - psi* r) / sqrt(r)``.
    ``mean_queue`` and ``mean_abs_idle`` are in raw customer / server units;
    use :meth:`queue_scaled` and :meth:`idle_scaled` for ``r**-nu`` scaling.
    Standard errors are batch means over all batches of all replicas.
    """

    r: int
    horizon: float
    burn_in: float
    batches: int
    seeds: list
    n_events: int
    mean_dev: np.ndarray
    mean_dev_se: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray
    mean_queue: np.ndarray
    mean_queue_se: np.ndarray
    mean_abs_idle: np.ndarray
    mean_abs_idle_se: np.ndarray
    last_pool: int
    histogram: np.ndarray | None = None
    samples: np.ndarray | None = None
    sample_dt: float | None = None
    _batch: dict = field(default=None, repr=False)

    @property
    def mean_queue_hat(self):
        return self.queue_scaled(0.5)

    @property
    def mean_abs_idle_hat(self):
        return self.idle_scaled(0.5)

    def queue_scaled(self, nu: float):
        f = self.r ** -nu
        return self.mean_queue * f, self.mean_queue_se * f

    def idle_scaled(self, nu: float):
        """Idleness of the pools other than the last one, scaled by ``r**-nu``."""
        keep = [j for j in range(len(self.mean_abs_idle)) if j != self.last_pool]
        f = self.r ** -nu
        return self.mean_abs_idle[keep] * f, self.mean_abs_idle_se[keep] * f

    @classmethod
    def from_batches(cls, batch: dict, **meta) -> "StationaryStats":
        dur, s1, s2, sq, sz = (batch[k] for k in ("dur", "s1", "s2", "sq", "sz"))
        n_b = len(dur)
        s2 = s2 + np.transpose(s2, (0, 2, 1)) - s2 * np.eye(s2.shape[1])[None]
        total = dur.sum()
        m = s1.sum(0) / total
        cov = s2.sum(0) / total - np.outer(m, m)
        cov = 0.5 * (cov + cov.T)
        m_b = s1 / dur[:, None]
        cov_b = s2 / dur[:, None, None] - m_b[:, :, None] * m_b[:, None, :]
        q_b = sq / dur[:, None]
        z_b = sz / dur[:, None]

        def se(x):
            if n_b < 2:
                return np.full(x.shape[1:], np.nan)
            return x.std(axis=0, ddof=1) / math.sqrt(n_b)

        return cls(
            mean_dev=m,
            mean_dev_se=se(m_b),
            cov=cov,
            cov_se=se(cov_b),
            mean_queue=sq.sum(0) / total,
            mean_queue_se=se(q_b),
            mean_abs_idle=sz.sum(0) / total,
            mean_abs_idle_se=se(z_b),
            _batch=batch,
            **meta,
        )

    @classmethod
    def pooled(cls, runs: list["StationaryStats"]) -> "StationaryStats":
        """Merge independent replicas by concatenating their batches."""
        first = runs[0]
        batch = {k: np.concatenate([run._batch[k] for run in runs]) for k in first._batch}
        hist = None
        if first.histogram is not None:
            hist = sum(run.histogram for run in runs) / len(runs)
        return cls.from_batches(
            batch,
            r=first.r,
            horizon=first.horizon,
            burn_in=first.burn_in,
            batches=sum(run.batches for run in runs),
            seeds=[s for run in runs for s in run.seeds],
            n_events=sum(run.n_events for run in runs),
            last_pool=first.last_pool,
            histogram=hist,
        )

    def to_dict(self, spec: SystemSpec) -> dict:
        edges = [[i + 1, j + 1] for i, j in spec.edges]
        idle_pools = [j + 1 for j in range(spec.num_pools) if j != self.last_pool]
        q_hat, q_hat_se = self.mean_queue_hat
        z_hat, z_hat_se = self.mean_abs_idle_hat
        return {
            "r": self.r,
            "horizon": self.horizon,
            "burn_in": self.burn_in,
            "batches": self.batches,
            "seeds": list(self.seeds),
            "events": self.n_events,
            "edges": edges,
            "mean_psi_hat": self.mean_dev.tolist(),
            "mean_psi_hat_se": self.mean_dev_se.tolist(),
            "cov_psi_hat": self.cov.tolist(),
            "cov_psi_hat_se": self.cov_se.tolist(),
            "mean_q_hat": q_hat.tolist(),
            "mean_q_hat_se": q_hat_se.tolist(),
            "idle_pools": idle_pools,
            "mean_abs_z_hat": z_hat.tolist(),
            "mean_abs_z_hat_se": z_hat_se.tolist(),
        }


def default_burn_in(spec: SystemSpec, pa: PriorityAssignment, eq: EquilibriumPoint) -> float:
    from .diffusion import build_model

    slowest = np.min(np.abs(np.linalg.eigvals(build_model(spec, pa, eq).A).real))
    return max(100.0, 20.0 / slowest)


def simulate_stationary(
    spec: SystemSpec,
    pa: PriorityAssignment,
    eq: EquilibriumPoint,
    r: int,
    horizon: float = 2000.0,
    burn_in: float | None = None,
    seed: int = 0,
    batches: int = 20,
    *,
    initial: SimState | None = None,
    empty_start: bool = False,
    histogram_radix=None,
    sample_dt: float | None = None,
    check: bool = True,
) -> StationaryStats:
    """Run one replica on ``[0, horizon]`` and average over ``[burn_in, horizon]``.

    ``histogram_radix`` (one bound per edge, then per class) turns on a
    time-weighted histogram of the joint state with mixed-radix index
    ``psi_0 + R_0 (psi_1 + R_1 (... q ...))``; states beyond a bound land in
    the final overflow bin.  ``sample_dt`` records the raw state on a time
    grid (from ``t = 0``) in ``samples``.
    """
    if burn_in is None:
        burn_in = default_burn_in(spec, pa, eq)
    if not horizon > burn_in or burn_in < 0:
        raise InvalidHorizon(f"need 0 <= burn_in < horizon, got {burn_in} and {horizon}")
    if batches < 1:
        raise ValueError("batches must be positive")
    if check:
        report = check_assumption3(eq)
        report.raise_if_failed(spec)
        from .planner import solve_spp

        rho = solve_spp(spec).rho
        if not rho < 1.0:
            raise AssumptionViolated(f"load rho = {rho:.6g} is not subcritical")

    tab = policy_tables(spec, pa)
    if initial is not None:
        state = initial.copy()
    elif empty_start:
        state = SimState.empty(spec, r)
    else:
        state = SimState.near_equilibrium(spec, pa, eq, r)
    psi, q, cap = state.psi, state.q, state.cap
    busy = state.busy(spec)
    n_edge, n_cls, n_pool = spec.num_edges, spec.num_classes, spec.num_pools

    psi_center = np.asarray(eq.occupancy) * r
    z_center = np.bincount(tab.edge_pool, weights=np.asarray(eq.occupancy),
                           minlength=n_pool) * r
    batch_edges = np.linspace(burn_in, horizon, batches + 1)
    acc = {
        "dur": np.zeros(batches),
        "s1": np.zeros((batches, n_edge)),
        "s2": np.zeros((batches, n_edge, n_edge)),
        "sq": np.zeros((batches, n_cls)),
        "sz": np.zeros((batches, n_pool)),
    }
    if histogram_radix is not None:
        radix = np.asarray(histogram_radix, dtype=np.int64)
        if radix.shape != (n_edge + n_cls,):
            raise ValueError("histogram_radix needs one bound per edge and per class")
        hist = np.zeros(int(np.prod(radix)) + 1)
    else:
        radix = np.zeros(0, dtype=np.int64)
        hist = np.zeros(0)
    if sample_dt is not None:
        if not sample_dt > 0:
            raise ValueError("sample_dt must be positive")
        samples = np.zeros((int(horizon / sample_dt) + 1, n_edge + n_cls), dtype=np.int64)
    else:
        samples = np.zeros((0, n_edge + n_cls), dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(seed))
    lam_r = tab.lam * r
    t, n_samples, n_events = float(state.t), 0, 0
    while t < horizon:
        uniforms = rng.random(CHUNK)
        try:
            t, _, n_samples, n_ev = K.run_stationary(
                t, float(horizon), uniforms, psi, q, busy, cap, lam_r, tab.mu,
                tab.route, tab.sched, tab.edge_cls, tab.edge_pool, psi_center, z_center,
                1.0 / math.sqrt(r), batch_edges, acc["dur"], acc["s1"], acc["s2"],
                acc["sq"], acc["sz"], hist, radix, float(sample_dt or 0.0), samples,
                n_samples,
            )
        except OverflowError as exc:
            raise RateOverflow(str(exc)) from None
        n_events += n_ev

    return StationaryStats.from_batches(
        acc,
        r=r,
        horizon=float(horizon),
        burn_in=float(burn_in),
        batches=batches,
        seeds=[seed],
        n_events=n_events,
        last_pool=eq.last_pool,
        histogram=hist / acc["dur"].sum() if hist.size else None,
        samples=samples[:n_samples] if samples.size else None,
        sample_dt=sample_dt,
    )


def fuzz_invariants(spec: SystemSpec, pa: PriorityAssignment, r: int, n_events: int,
                    seed: int = 0, initial: SimState | None = None) -> tuple[int, int]:
    """Run ``n_events`` jumps from ``initial`` (empty by default) checking
    conservation, capacity and no-starvation after each one.

    Returns ``(violations, events)``.
    """
    tab = policy_tables(spec, pa)
    state = (initial or SimState.empty(spec, r)).copy()
    busy = state.busy(spec)
    rng = np.random.Generator(np.random.PCG64(seed))
    bad = done = 0
    while done < n_events:
        n = min(CHUNK // 2, n_events - done)
        b, d = K.run_checked(rng.random(2 * n), state.psi, state.q, busy, state.cap,
                             tab.lam * r, tab.mu, tab.route, tab.sched, tab.edge_cls,
                             tab.edge_pool)
        bad += int(b)
        done += int(d)
    return bad, done
