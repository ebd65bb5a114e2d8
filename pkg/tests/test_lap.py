import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lapsim.errors import AssumptionViolated
from lapsim.lap import assign_priorities, canonical_spec, check_assumption3, compute_equilibrium

from _specgen import random_spec, random_valid_spec


def test_w1_priorities(w1):
    pa = assign_priorities(w1)
    assert pa.class_priority == (1, 2)
    assert pa.edge_priority == (1, 2, 3)  # (1,1), (1,2), (2,2)
    assert pa.last_pool == 1


def test_single_edge_priorities(single):
    pa = assign_priorities(single)
    assert pa.class_priority == (1,) and pa.edge_priority == (1,)


def test_star_priorities(star):
    pa = assign_priorities(star)
    assert pa.class_priority == (1,)
    assert pa.edge_priority == (1, 2, 3)
    assert pa.last_pool == 2


def test_w1_equilibrium(w1):
    eq = compute_equilibrium(w1, assign_priorities(w1))
    assert eq.routing_rates == pytest.approx((1.0, 0.4, 0.8), abs=1e-12)
    assert eq.occupancy == pytest.approx((1.0, 0.8, 0.8), abs=1e-12)
    assert eq.pool_slack == pytest.approx((0.0, 0.4), abs=1e-12)
    assert check_assumption3(eq).passed


def test_single_edge_equilibrium(single):
    eq = compute_equilibrium(single, assign_priorities(single))
    assert eq.routing_rates == (0.5,) and eq.occupancy == (0.5,)
    assert eq.pool_slack == (0.5,)
    assert check_assumption3(eq).passed


def test_w1_low_class1_rate_violates_assumption3(w1):
    spec = w1.with_rates(lam=(1.0, 0.8))
    eq = compute_equilibrium(spec, assign_priorities(spec))
    assert eq.routing_rates[1] == 0.0 and eq.occupancy[1] == 0.0
    rep = check_assumption3(eq)
    assert not rep.passed and rep.zero_edges == (1,)
    with pytest.raises(AssumptionViolated) as err:
        rep.raise_if_failed(spec)
    assert err.value.edges == [(0, 1)]


def test_last_pool_without_slack_fails(w1):
    spec = w1.with_rates(lam=(1.4, 1.2))
    rep = check_assumption3(compute_equilibrium(spec, assign_priorities(spec)))
    assert not rep.passed and rep.last_pool_full


def test_canonical_relabel_puts_lowest_activity_last():
    from lapsim.model import make_spec

    # pool 1 carries the lowest-priority activity (2,1), so pools swap labels
    spec = make_spec([1.0, 1.0], [1.0, 1.0], {(1, 1): 1.0, (1, 2): 1.0, (2, 1): 1.0})
    pa = assign_priorities(spec)
    assert pa.edge_priority == (2, 1, 3)
    assert pa.pool_label == (1, 0)
    canon = canonical_spec(spec, pa)
    assert canon.edges == ((0, 0), (0, 1), (1, 1))
    assert canon.mu == spec.mu
    assert canon.edges[2] == (canon.num_classes - 1, canon.num_pools - 1)


def _check_priority_invariants(spec, pa):
    for k, (i, j) in enumerate(spec.edges):
        for k2, (i2, j2) in enumerate(spec.edges):
            if pa.class_priority[i] < pa.class_priority[i2]:
                assert pa.edge_priority[k] < pa.edge_priority[k2]
            if j == j2 and i != i2:
                assert (pa.edge_priority[k] < pa.edge_priority[k2]) == (
                    pa.class_priority[i] < pa.class_priority[i2])
    low = max(range(spec.num_edges), key=pa.edge_priority.__getitem__)
    i, j = spec.edges[low]
    assert pa.class_label[i] == spec.num_classes - 1
    assert pa.pool_label[j] == spec.num_pools - 1
    assert sorted(pa.edge_priority) == list(range(1, spec.num_edges + 1))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_priority_invariants(seed):
    spec = random_spec(np.random.default_rng(seed))
    _check_priority_invariants(spec, assign_priorities(spec))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_equilibrium_invariants_on_valid_specs(seed):
    spec, pa, eq = random_valid_spec(np.random.default_rng(seed))
    psi = np.array(eq.occupancy)
    assert psi.min() > 0
    for k, mu in enumerate(spec.mu):
        assert psi[k] == pytest.approx(eq.routing_rates[k] / mu, rel=1e-15)
    for i in range(spec.num_classes):
        served = sum(mu * p for (a, _), mu, p in zip(spec.edges, spec.mu, psi) if a == i)
        assert abs(served - spec.lam[i]) <= 1e-12 * max(1.0, spec.lam[i])
    for j in range(spec.num_pools):
        total = sum(p for (_, b), p in zip(spec.edges, psi) if b == j)
        if j == eq.last_pool:
            assert total < spec.beta[j]
        else:
            assert abs(total - spec.beta[j]) <= 1e-12
