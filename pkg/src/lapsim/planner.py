"""Static planning problem: the load-balancing LP

    minimise rho  s.t.  flow >= 0,  sum_j flow_ij = lam_i,
                        sum_i flow_ij / (beta_j mu_ij) <= rho,

solved by bisection on ``rho``.  For fixed ``rho`` feasibility on a tree is
decided exactly by leaf elimination, so no general LP solver is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NumericalFailure
from .model import SystemSpec, _component_size

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class SppSolution:
    flows: tuple[float, ...]  # per edge, spec edge order
    rho: float
    pool_loads: tuple[float, ...]


@dataclass(frozen=True)
class CrpReport:
    basic_activities: tuple[tuple[int, int], ...]
    is_tree: bool
    rho_subcritical: bool
    degeneracy_flag: bool

    def to_dict(self):
        return {
            "basic_activities": [[i + 1, j + 1] for i, j in self.basic_activities],
            "is_tree": self.is_tree,
            "rho_subcritical": self.rho_subcritical,
            "degeneracy_flag": self.degeneracy_flag,
        }


def route_on_tree(spec: SystemSpec, rho: float):
    """Try to route every class's demand within pool capacities ``rho * beta_j``.

    Returns per-edge flows, or ``None`` if the routing is infeasible.  A leaf
    class must send everything over its only edge; a leaf pool soaks up as
    much of its only class as it can, since its capacity is useless to anyone
    else.  Both moves are forced, so the procedure is exact.
    """
    n_cls = spec.num_classes
    demand = list(spec.lam)
    cap = [rho * b for b in spec.beta]  # in server units
    flows = [0.0] * spec.num_edges
    adj = [set() for _ in range(n_cls + spec.num_pools)]
    for k, (i, j) in enumerate(spec.edges):
        adj[i].add(k)
        adj[n_cls + j].add(k)
    alive = set(range(n_cls + spec.num_pools))

    while len(alive) > 1:
        v = min(u for u in alive if len(adj[u]) == 1)
        (k,) = adj[v]
        i, j = spec.edges[k]
        mu = spec.mu[k]
        if v < n_cls:
            flows[k] = demand[i]
            cap[j] -= demand[i] / mu
            demand[i] = 0.0
            if cap[j] < -1e-12 * max(1.0, rho * spec.beta[j]):
                return None
        else:
            take = min(demand[i], max(cap[j], 0.0) * mu)
            flows[k] = take
            demand[i] -= take
            cap[j] -= take / mu
        adj[i].discard(k)
        adj[n_cls + j].discard(k)
        alive.discard(v)

    (last,) = alive
    if last < n_cls and demand[last] > 1e-12 * max(1.0, spec.lam[last]):
        return None
    return flows


def pool_loads(spec: SystemSpec, flows) -> list[float]:
    loads = [0.0] * spec.num_pools
    for (i, j), f, mu in zip(spec.edges, flows, spec.mu):
        loads[j] += f / (spec.beta[j] * mu)
    return loads


def solve_spp(spec: SystemSpec, rel_tol: float = 1e-14) -> SppSolution:
    lo = 0.0
    # all demand of each class on one edge is always feasible
    hi = sum(
        spec.lam[i] / (spec.beta[spec.servers_of[i][0]] * spec.mu_of(i, spec.servers_of[i][0]))
        for i in range(spec.num_classes)
    )
    best = route_on_tree(spec, hi)
    if best is None:
        raise NumericalFailure("upper bracket for rho is infeasible")
    for _ in range(200):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        flows = route_on_tree(spec, mid)
        if flows is None:
            lo = mid
        else:
            hi, best = mid, flows
    loads = pool_loads(spec, best)
    return SppSolution(tuple(best), max(loads), tuple(loads))


def check_crp(spec: SystemSpec, sol: SppSolution, tol: float = DEFAULT_TOL) -> CrpReport:
    basic = tuple(e for e, f in zip(spec.edges, sol.flows) if f > tol)
    touched_c = {i for i, _ in basic}
    touched_p = {j for _, j in basic}
    is_tree = False
    if len(touched_c) == spec.num_classes and basic:
        # relabel the touched vertices and test connectivity + edge count
        cmap = {c: n for n, c in enumerate(sorted(touched_c))}
        pmap = {p: n for n, p in enumerate(sorted(touched_p))}
        sub = [(cmap[i], pmap[j]) for i, j in basic]
        n_v = len(cmap) + len(pmap)
        is_tree = len(sub) == n_v - 1 and _component_size(len(cmap), len(pmap), sub) == n_v
    degenerate = any(f <= tol for f in sol.flows) or any(
        load < sol.rho - tol for load in sol.pool_loads
    )
    return CrpReport(
        basic_activities=basic,
        is_tree=is_tree,
        rho_subcritical=sol.rho < 1.0 - tol,
        degeneracy_flag=degenerate,
    )
