import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from lapsim.model import make_spec
from lapsim.planner import check_crp, route_on_tree, solve_spp

from _specgen import random_spec


def lp_rho(spec):
    """Independent oracle: the load-balancing LP through scipy's HiGHS."""
    n_e = spec.num_edges
    c = np.zeros(n_e + 1)
    c[-1] = 1.0
    a_eq = np.zeros((spec.num_classes, n_e + 1))
    for k, (i, _) in enumerate(spec.edges):
        a_eq[i, k] = 1.0
    a_ub = np.zeros((spec.num_pools, n_e + 1))
    for k, (_, j) in enumerate(spec.edges):
        a_ub[j, k] = 1.0 / (spec.beta[j] * spec.mu[k])
    a_ub[:, -1] = -1.0
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(spec.num_pools), A_eq=a_eq, b_eq=spec.lam,
                  bounds=[(0, None)] * (n_e + 1), method="highs")
    assert res.status == 0
    return res.x[-1]


def grid_rho(spec, n=2001):
    """Brute force for one free split (a class on two pools)."""
    best = np.inf
    i, (j1, j2) = next((i, s) for i, s in enumerate(spec.servers_of) if len(s) == 2)
    for x in np.linspace(0.0, spec.lam[i], n):
        flows = []
        for (a, b), mu in zip(spec.edges, spec.mu):
            if a != i:
                flows.append(spec.lam[a])
            else:
                flows.append(x if b == j1 else spec.lam[i] - x)
        loads = np.zeros(spec.num_pools)
        for (a, b), f, mu in zip(spec.edges, flows, spec.mu):
            loads[b] += f / (spec.beta[b] * mu)
        best = min(best, loads.max())
    return best


def test_w1(w1):
    sol = solve_spp(w1)
    assert sol.flows == pytest.approx((0.9, 0.5, 0.8), abs=1e-9)
    assert sol.rho == pytest.approx(0.9, abs=1e-9)
    assert sol.rho == max(sol.pool_loads)
    assert grid_rho(w1) == pytest.approx(sol.rho, abs=1e-3)


def test_single_edge(single):
    sol = solve_spp(single)
    assert sol.flows == pytest.approx((0.5,))
    assert sol.rho == pytest.approx(0.5, abs=1e-12)


def test_w1_scaled_to_critical(w1):
    sol = solve_spp(w1.scaled(10 / 9))
    assert sol.rho == pytest.approx(1.0, abs=1e-9)
    assert not check_crp(w1.scaled(10 / 9), sol).rho_subcritical


def test_leaf_elimination_feasibility(w1):
    assert route_on_tree(w1, 0.9 + 1e-9) is not None
    assert route_on_tree(w1, 0.9 - 1e-6) is None


def test_crp_w1(w1):
    rep = check_crp(w1, solve_spp(w1), 1e-9)
    assert rep.basic_activities == w1.edges
    assert rep.is_tree and rep.rho_subcritical and not rep.degeneracy_flag


def test_crp_single(single):
    rep = check_crp(single, solve_spp(single))
    assert rep.is_tree and rep.rho_subcritical


def test_w1_lower_class1_rate_is_not_degenerate(w1):
    # lambda_1 = 1.0 still balances both pools at rho = 0.7 with all flows positive;
    # it is the LAP equilibrium, not the LP, that loses an activity here
    spec = w1.with_rates(lam=(1.0, 0.8))
    sol = solve_spp(spec)
    assert sol.rho == pytest.approx(0.7, abs=1e-9)
    assert sol.flows == pytest.approx((0.7, 0.3, 0.8), abs=1e-9)
    assert not check_crp(spec, sol).degeneracy_flag


def test_boundary_optimum_is_flagged(w1):
    # class 2 alone loads pool 2 beyond what pool 1 needs: flow on (1,2) is zero
    spec = w1.with_rates(lam=(0.4, 1.0))
    sol = solve_spp(spec)
    assert sol.rho == pytest.approx(0.5, abs=1e-9)
    assert sol.flows[1] == pytest.approx(0.0, abs=1e-9)
    rep = check_crp(spec, sol)
    assert rep.degeneracy_flag
    assert not rep.is_tree
    assert rep.basic_activities == ((0, 0), (1, 1))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_lp_oracle_and_is_feasible(seed):
    spec = random_spec(np.random.default_rng(seed), max_cls=3, max_pool=3)
    sol = solve_spp(spec)
    assert sol.rho == pytest.approx(lp_rho(spec), abs=1e-6)
    flows = np.array(sol.flows)
    assert flows.min() >= 0
    for i in range(spec.num_classes):
        got = sum(f for (a, _), f in zip(spec.edges, flows) if a == i)
        assert abs(got - spec.lam[i]) <= 1e-9
    assert max(sol.pool_loads) <= sol.rho + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_homogeneous_in_arrival_rates(seed, c):
    spec = random_spec(np.random.default_rng(seed))
    assert solve_spp(spec.scaled(c)).rho == pytest.approx(c * solve_spp(spec).rho, rel=1e-9)


def test_star_rho(star):
    assert solve_spp(star).rho == pytest.approx(2.5 / 3, abs=1e-9)
