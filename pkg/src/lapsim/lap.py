"""Leaf Activity Priority: static priorities from leaf stripping, and the
fluid equilibrium those priorities induce.

Leaf choice is made deterministic by a fixed tie-break: pool leaves before
class leaves, then smallest index; when a non-leaf class needs an edge to a
leaf pool, the smallest such pool index wins.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import AssumptionViolated, LapsimError
from .model import SystemSpec

FULL_TOL = 1e-12


@dataclass(frozen=True)
class PriorityAssignment:
    """Priorities are ranks starting at 1 (highest).

    ``class_priority[i]`` is the rank of class ``i``; ``edge_priority[k]``
    the rank of ``spec.edges[k]``.  ``class_label`` / ``pool_label`` map the
    original 0-based indices to canonical 0-based labels, in which classes
    are numbered by priority and the pool of the lowest-priority activity is
    last.
    """

    class_priority: tuple[int, ...]
    edge_priority: tuple[int, ...]
    class_label: tuple[int, ...]
    pool_label: tuple[int, ...]
    last_pool: int  # original index of the pool with the lowest-priority activity

    @property
    def class_order(self) -> tuple[int, ...]:
        """Classes from highest to lowest priority."""
        return tuple(sorted(range(len(self.class_priority)), key=self.class_priority.__getitem__))

    @property
    def edge_order(self) -> tuple[int, ...]:
        """Edge indices from highest to lowest priority."""
        return tuple(sorted(range(len(self.edge_priority)), key=self.edge_priority.__getitem__))

    def to_dict(self, spec: SystemSpec) -> dict:
        return {
            "class_priority": {str(i + 1): p for i, p in enumerate(self.class_priority)},
            "edge_priority": [
                {"i": i + 1, "j": j + 1, "priority": p}
                for (i, j), p in zip(spec.edges, self.edge_priority)
            ],
            "canonical_class_label": [c + 1 for c in self.class_label],
            "canonical_pool_label": [p + 1 for p in self.pool_label],
            "last_pool": self.last_pool + 1,
        }


@dataclass(frozen=True)
class EquilibriumPoint:
    routing_rates: tuple[float, ...]  # per edge
    occupancy: tuple[float, ...]  # psi*, per edge
    pool_slack: tuple[float, ...]  # beta_j - sum_i psi*_ij
    last_pool: int

    def to_dict(self, spec: SystemSpec) -> dict:
        return {
            "edges": [
                {"i": i + 1, "j": j + 1, "lambda_ij": lr, "psi_star": ps}
                for (i, j), lr, ps in zip(spec.edges, self.routing_rates, self.occupancy)
            ],
            "q_star": [0.0] * spec.num_classes,
            "pool_slack": list(self.pool_slack),
            "last_pool": self.last_pool + 1,
        }


@dataclass(frozen=True)
class Assumption3Report:
    passed: bool
    zero_edges: tuple[int, ...]  # edge indices with psi* <= 0
    unfilled_pools: tuple[int, ...]  # pools other than the last one that are not full
    last_pool_full: bool

    def raise_if_failed(self, spec: SystemSpec):
        if self.passed:
            return
        parts = []
        if self.zero_edges:
            parts.append(
                "zero occupancy on "
                + ", ".join(f"({spec.edges[k][0] + 1},{spec.edges[k][1] + 1})" for k in self.zero_edges)
            )
        if self.unfilled_pools:
            parts.append("pools not full: " + ", ".join(str(j + 1) for j in self.unfilled_pools))
        if self.last_pool_full:
            parts.append("last pool has no slack")
        raise AssumptionViolated(
            "; ".join(parts),
            edges=[spec.edges[k] for k in self.zero_edges],
            pools=self.unfilled_pools,
        )


def _strip_classes(spec: SystemSpec) -> list[int]:
    n_cls = spec.num_classes
    # vertex ids: classes 0..I-1, pools I..I+J-1
    adj = [set(spec.servers_of[i]) for i in range(n_cls)]
    adj = [{n_cls + j for j in s} for s in adj] + [set(c) for c in spec.classes_of]
    alive = set(range(len(adj)))
    order = []
    while alive:
        candidates = [v for v in alive if len(adj[v]) <= 1]
        # pools first, then smallest index
        v = min(candidates, key=lambda u: (u < n_cls, u if u < n_cls else u - n_cls))
        if v < n_cls:
            order.append(v)
        for w in adj[v]:
            adj[w].discard(v)
        adj[v].clear()
        alive.discard(v)
    return order


def assign_priorities(spec: SystemSpec) -> PriorityAssignment:
    class_order = _strip_classes(spec)
    class_priority = [0] * spec.num_classes
    for rank, i in enumerate(class_order, start=1):
        class_priority[i] = rank

    cls_edges = [set(s) for s in spec.servers_of]
    pool_deg = [len(c) for c in spec.classes_of]
    edge_priority = [0] * spec.num_edges
    rank = 1
    for i in class_order:
        while cls_edges[i]:
            if len(cls_edges[i]) == 1:
                (j,) = cls_edges[i]
            else:
                leaf_pools = [j for j in cls_edges[i] if pool_deg[j] == 1]
                if not leaf_pools:
                    raise LapsimError(f"class {i + 1} has no edge to a leaf pool")
                j = min(leaf_pools)
            edge_priority[spec.edge_index(i, j)] = rank
            rank += 1
            cls_edges[i].discard(j)
            pool_deg[j] -= 1

    last_edge = max(range(spec.num_edges), key=edge_priority.__getitem__)
    last_pool = spec.edges[last_edge][1]
    first_rank = [min(edge_priority[spec.edge_index(i, j)] for i in spec.classes_of[j])
                  for j in range(spec.num_pools)]
    pools = sorted((j for j in range(spec.num_pools) if j != last_pool), key=first_rank.__getitem__)
    pools.append(last_pool)
    pool_label = [0] * spec.num_pools
    for lbl, j in enumerate(pools):
        pool_label[j] = lbl

    return PriorityAssignment(
        class_priority=tuple(class_priority),
        edge_priority=tuple(edge_priority),
        class_label=tuple(p - 1 for p in class_priority),
        pool_label=tuple(pool_label),
        last_pool=last_pool,
    )


def compute_equilibrium(spec: SystemSpec, pa: PriorityAssignment) -> EquilibriumPoint:
    """Greedy fill in decreasing priority: each activity takes the smaller of
    its class's leftover demand and its pool's leftover capacity."""
    demand = list(spec.lam)
    room = list(spec.beta)
    rates = [0.0] * spec.num_edges
    occ = [0.0] * spec.num_edges
    for k in pa.edge_order:
        i, j = spec.edges[k]
        mu = spec.mu[k]
        rate = max(0.0, min(demand[i], mu * room[j]))
        rates[k] = rate
        occ[k] = rate / mu
        demand[i] -= rate
        room[j] -= occ[k]
    slack = [spec.beta[j] - sum(occ[spec.edge_index(i, j)] for i in spec.classes_of[j])
             for j in range(spec.num_pools)]
    return EquilibriumPoint(tuple(rates), tuple(occ), tuple(slack), pa.last_pool)


def check_assumption3(eq: EquilibriumPoint, tol: float = FULL_TOL) -> Assumption3Report:
    zero = tuple(k for k, x in enumerate(eq.occupancy) if not x > 0.0)
    unfilled = tuple(
        j for j, s in enumerate(eq.pool_slack) if j != eq.last_pool and abs(s) > tol
    )
    last_full = not eq.pool_slack[eq.last_pool] > tol
    return Assumption3Report(not (zero or unfilled or last_full), zero, unfilled, last_full)


def canonical_spec(spec: SystemSpec, pa: PriorityAssignment) -> SystemSpec:
    """The same system relabelled so classes follow priority order and the
    pool carrying the lowest-priority activity is last."""
    lam = [0.0] * spec.num_classes
    for i, c in enumerate(pa.class_label):
        lam[c] = spec.lam[i]
    beta = [0.0] * spec.num_pools
    for j, p in enumerate(pa.pool_label):
        beta[p] = spec.beta[j]
    edges = tuple((pa.class_label[i], pa.pool_label[j]) for i, j in spec.edges)
    return SystemSpec(tuple(lam), tuple(beta), edges, spec.mu)
