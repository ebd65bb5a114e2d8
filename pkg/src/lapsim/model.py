"""Service-system description: customer classes, server pools and the
activity tree connecting them.

Classes and pools are 0-indexed inside the package.  The JSON document and
the CLI use 1-based labels; conversion happens only in :func:`validate_spec`,
:meth:`SystemSpec.to_dict` and :func:`neighbors`.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import UnknownVertex, ValidationError

CLASS = "class"
POOL = "pool"


@dataclass(frozen=True)
class SystemSpec:
    """Unscaled model: per-class arrival rates, per-pool sizes and the
    service rate of every activity ``(i, j)``.

    Edges are stored sorted by ``(class, pool)``; ``mu[k]`` belongs to
    ``edges[k]``.  All downstream matrices use this edge order.
    """

    lam: tuple[float, ...]
    beta: tuple[float, ...]
    edges: tuple[tuple[int, int], ...]
    mu: tuple[float, ...]
    _edge_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        order = sorted(range(len(self.edges)), key=lambda k: tuple(self.edges[k]))
        edges = tuple((int(self.edges[k][0]), int(self.edges[k][1])) for k in order)
        mu = tuple(float(self.mu[k]) for k in order)
        object.__setattr__(self, "lam", tuple(float(x) for x in self.lam))
        object.__setattr__(self, "beta", tuple(float(x) for x in self.beta))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mu", mu)
        issues = _check(self.lam, self.beta, edges, mu)
        if issues:
            raise ValidationError(issues)
        object.__setattr__(self, "_edge_index", {e: k for k, e in enumerate(edges)})

    @property
    def num_classes(self) -> int:
        return len(self.lam)

    @property
    def num_pools(self) -> int:
        return len(self.beta)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, i: int, j: int) -> int:
        """Position of activity ``(i, j)`` (0-based labels) in :attr:`edges`."""
        try:
            return self._edge_index[(i, j)]
        except KeyError:
            raise UnknownVertex(f"no activity ({i + 1},{j + 1})") from None

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self._edge_index

    def mu_of(self, i: int, j: int) -> float:
        return self.mu[self.edge_index(i, j)]

    @cached_property
    def servers_of(self) -> tuple[tuple[int, ...], ...]:
        """Pools able to serve each class (ascending)."""
        out = [[] for _ in range(self.num_classes)]
        for i, j in self.edges:
            out[i].append(j)
        return tuple(tuple(sorted(x)) for x in out)

    @cached_property
    def classes_of(self) -> tuple[tuple[int, ...], ...]:
        """Classes each pool can serve (ascending)."""
        out = [[] for _ in range(self.num_pools)]
        for i, j in self.edges:
            out[j].append(i)
        return tuple(tuple(sorted(x)) for x in out)

    def arrays(self):
        """``(lam, beta, edge_class, edge_pool, mu)`` as fresh numpy arrays."""
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        return (
            np.array(self.lam),
            np.array(self.beta),
            e[:, 0].copy(),
            e[:, 1].copy(),
            np.array(self.mu),
        )

    def scaled(self, lam_factor: float = 1.0) -> "SystemSpec":
        return SystemSpec(
            tuple(x * lam_factor for x in self.lam), self.beta, self.edges, self.mu
        )

    def with_rates(self, lam=None, beta=None, mu=None) -> "SystemSpec":
        return SystemSpec(
            self.lam if lam is None else tuple(lam),
            self.beta if beta is None else tuple(beta),
            self.edges,
            self.mu if mu is None else tuple(mu),
        )

    def to_dict(self) -> dict:
        return {
            "classes": self.num_classes,
            "pools": self.num_pools,
            "lambda": list(self.lam),
            "beta": list(self.beta),
            "edges": [
                {"i": i + 1, "j": j + 1, "mu": m} for (i, j), m in zip(self.edges, self.mu)
            ],
        }


def _check(lam, beta, edges, mu):
    issues = []
    n_cls, n_pool = len(lam), len(beta)
    if n_cls < 1 or n_pool < 1:
        issues.append(("Malformed", "need at least one class and one pool"))
        return issues
    for name, values in (("lambda", lam), ("beta", beta), ("mu", mu)):
        for k, v in enumerate(values):
            if not (math.isfinite(v) and v > 0):
                issues.append(("NonPositiveRate", f"{name}[{k + 1}] = {v!r}"))
    seen = set()
    for i, j in edges:
        if not (0 <= i < n_cls and 0 <= j < n_pool):
            issues.append(("Malformed", f"edge ({i + 1},{j + 1}) out of range"))
            return issues
        if (i, j) in seen:
            issues.append(("Malformed", f"duplicate edge ({i + 1},{j + 1})"))
        seen.add((i, j))
    if issues:
        return issues

    deg_c = [0] * n_cls
    deg_p = [0] * n_pool
    for i, j in edges:
        deg_c[i] += 1
        deg_p[j] += 1
    for i, d in enumerate(deg_c):
        if d == 0:
            issues.append(("IsolatedVertex", f"class {i + 1} has no activity"))
    for j, d in enumerate(deg_p):
        if d == 0:
            issues.append(("IsolatedVertex", f"pool {j + 1} has no activity"))

    n_vertices = n_cls + n_pool
    if len(edges) != n_vertices - 1:
        issues.append(
            (
                "NotATree",
                f"{len(edges)} edges on {n_vertices} vertices (a tree needs {n_vertices - 1})",
            )
        )
    elif _component_size(n_cls, n_pool, edges) != n_vertices:
        issues.append(("NotATree", "activity graph is disconnected"))
    return issues


def _component_size(n_cls, n_pool, edges):
    # vertex ids: classes 0..I-1, pools I..I+J-1
    adj = [[] for _ in range(n_cls + n_pool)]
    for i, j in edges:
        adj[i].append(n_cls + j)
        adj[n_cls + j].append(i)
    seen = {0}
    todo = deque([0])
    while todo:
        v = todo.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return len(seen)


def validate_spec(raw: Mapping | SystemSpec) -> SystemSpec:
    """Build a :class:`SystemSpec` from its JSON document form.

    Raises :class:`ValidationError` listing every problem found.
    """
    if isinstance(raw, SystemSpec):
        return raw
    try:
        n_cls = int(raw["classes"])
        n_pool = int(raw["pools"])
        lam = [float(x) for x in raw["lambda"]]
        beta = [float(x) for x in raw["beta"]]
        edges, mu = [], []
        for e in raw["edges"]:
            edges.append((int(e["i"]) - 1, int(e["j"]) - 1))
            mu.append(float(e["mu"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError([("Malformed", f"bad document: {exc!r}")]) from None
    if len(lam) != n_cls or len(beta) != n_pool:
        raise ValidationError(
            [("Malformed", "length of 'lambda'/'beta' disagrees with 'classes'/'pools'")]
        )
    return SystemSpec(tuple(lam), tuple(beta), tuple(edges), tuple(mu))


def load_spec(path) -> SystemSpec:
    with open(path) as fh:
        return validate_spec(json.load(fh))


def make_spec(
    lam: Sequence[float],
    beta: Sequence[float],
    edges: Mapping[tuple[int, int], float],
) -> SystemSpec:
    """Convenience constructor taking 1-based ``{(i, j): mu}``."""
    return SystemSpec(
        tuple(lam),
        tuple(beta),
        tuple((i - 1, j - 1) for i, j in edges),
        tuple(edges.values()),
    )


def neighbors(spec: SystemSpec, kind: str, index: int) -> list[int]:
    """1-based labels adjacent to class or pool ``index`` (also 1-based)."""
    if kind == CLASS and 1 <= index <= spec.num_classes:
        return [j + 1 for j in spec.servers_of[index - 1]]
    if kind == POOL and 1 <= index <= spec.num_pools:
        return [i + 1 for i in spec.classes_of[index - 1]]
    raise UnknownVertex(f"{kind} {index}")


def leaves(spec: SystemSpec) -> list[tuple[str, int]]:
    """Degree-one vertices as ``(kind, 0-based index)``."""
    out = [(CLASS, i) for i, s in enumerate(spec.servers_of) if len(s) == 1]
    out += [(POOL, j) for j, c in enumerate(spec.classes_of) if len(c) == 1]
    return out


def without_leaf(spec: SystemSpec, kind: str, index: int) -> SystemSpec:
    """Spec with leaf ``index`` (0-based) and its single activity removed;
    the remaining vertices of that kind are renumbered consecutively."""
    deg = spec.servers_of if kind == CLASS else spec.classes_of
    if not 0 <= index < len(deg):
        raise UnknownVertex(f"{kind} {index + 1}")
    if len(deg[index]) != 1:
        raise ValueError(f"{kind} {index + 1} is not a leaf")
    pos = 0 if kind == CLASS else 1

    def shift(v):
        return v - 1 if v > index else v

    edges, mu = [], []
    for e, m in zip(spec.edges, spec.mu):
        if e[pos] == index:
            continue
        e = list(e)
        e[pos] = shift(e[pos])
        edges.append(tuple(e))
        mu.append(m)
    lam, beta = list(spec.lam), list(spec.beta)
    if kind == CLASS:
        del lam[index]
    else:
        del beta[index]
    return SystemSpec(tuple(lam), tuple(beta), tuple(edges), tuple(mu))
