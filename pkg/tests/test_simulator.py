import math

import numpy as np
import pytest

from lapsim.errors import AssumptionViolated, InvalidHorizon
from lapsim.lap import assign_priorities, compute_equilibrium
from lapsim.simulator import (IDLE, QUEUE, SimState, apply_event, fuzz_invariants,
                              pool_capacity, route_arrival, scaled_deviation,
                              schedule_completion, simulate_stationary, step, violations)

from _specgen import random_valid_spec


def state(spec, r, psi, q):
    return SimState.from_counts(spec, r, psi, q)


def test_pool_capacity_floor():
    assert pool_capacity(2.0, 10) == 20
    assert pool_capacity(0.29, 100) == 29
    assert pool_capacity(0.5, 3) == 1


def test_route_prefers_highest_priority_pool(w1_lap):
    spec, pa, _ = w1_lap
    assert route_arrival(state(spec, 10, [5, 3, 3], [0, 0]), 0, spec, pa) == 0


def test_route_to_only_pool_with_room(w1_lap):
    spec, pa, _ = w1_lap
    assert route_arrival(state(spec, 10, [10, 3, 3], [0, 0]), 0, spec, pa) == 1


def test_route_queues_when_full(w1_lap):
    spec, pa, _ = w1_lap
    assert route_arrival(state(spec, 10, [10, 10, 10], [0, 0]), 0, spec, pa) is QUEUE


def test_schedule_highest_priority_queue(w1_lap):
    spec, pa, _ = w1_lap
    full = [10, 10, 10]
    assert schedule_completion(state(spec, 10, full, [2, 5]), 1, spec, pa) == 0
    assert schedule_completion(state(spec, 10, full, [0, 5]), 1, spec, pa) == 1
    assert schedule_completion(state(spec, 10, full, [0, 0]), 1, spec, pa) is IDLE


def test_arrival_takes_idle_server(single):
    pa = assign_priorities(single)
    new, tag = apply_event(state(single, 4, [2], [0]), ("arrival", 0), single, pa)
    assert new.psi.tolist() == [3] and tag == "routed"


def test_completion_pulls_from_queue(single):
    pa = assign_priorities(single)
    new, tag = apply_event(state(single, 4, [4], [3]), ("completion", (0, 0)), single, pa)
    assert new.psi.tolist() == [4] and new.q.tolist() == [2] and tag == "transfer"


def test_completion_transfers_to_other_class(w1_lap):
    spec, pa, _ = w1_lap
    before = state(spec, 10, [10, 8, 12], [0, 1])
    assert violations(before, spec) == 0
    new, tag = apply_event(before, ("completion", (0, 1)), spec, pa)
    assert new.psi.tolist() == [10, 7, 13]
    assert new.q.tolist() == [0, 0]
    assert tag == "transfer"
    assert before.psi.tolist() == [10, 8, 12]  # input untouched


def test_step_is_a_valid_jump(w1_lap):
    spec, pa, _ = w1_lap
    rng = np.random.default_rng(3)
    s = SimState.near_equilibrium(spec, pa, w1_lap[2], 10)
    for _ in range(2000):
        x_before = s.totals(spec)
        res = step(s, spec, pa, rng)
        delta = res.state.totals(spec) - x_before
        kind, what = res.event
        expect = np.zeros(2, dtype=int)
        expect[what if kind == "arrival" else what[0]] = 1 if kind == "arrival" else -1
        assert delta.tolist() == expect.tolist()
        assert res.holding_time > 0 and res.state.t == pytest.approx(s.t + res.holding_time)
        assert violations(res.state, spec) == 0
        s = res.state


def test_step_event_frequencies(single):
    # from psi = 2 at r = 4: arrival rate 2, completion rate 2
    pa = assign_priorities(single)
    rng = np.random.default_rng(11)
    s = state(single, 4, [2], [0])
    n = 20000
    arrivals = sum(step(s, single, pa, rng).event[0] == "arrival" for _ in range(n))
    assert abs(arrivals / n - 0.5) < 4 * math.sqrt(0.25 / n)


def test_scaled_deviation(single, w1_lap):
    eq1 = compute_equilibrium(single, assign_priorities(single))
    p, q, z = scaled_deviation(state(single, 100, [55], [0]), single, eq1)
    assert p.tolist() == pytest.approx([0.5])
    spec, pa, eq = w1_lap
    p, q, z = scaled_deviation(state(spec, 100, [100, 80, 80], [0, 0]), spec, eq)
    assert z[0] == pytest.approx(0.0, abs=1e-12)
    assert np.abs(p).max() < 1e-12


def test_rounded_equilibrium_deviation_is_small(w1_lap):
    spec, pa, eq = w1_lap
    for r in (7, 33, 101):
        s = SimState.near_equilibrium(spec, pa, eq, r)
        p, _, _ = scaled_deviation(s, spec, eq)
        assert np.abs(p).max() <= r ** -0.5


def test_invalid_horizon(w1_lap):
    spec, pa, eq = w1_lap
    with pytest.raises(InvalidHorizon):
        simulate_stationary(spec, pa, eq, 10, horizon=50, burn_in=50)


def test_rejects_assumption_violation(w1):
    spec = w1.with_rates(lam=(1.0, 0.8))
    pa = assign_priorities(spec)
    with pytest.raises(AssumptionViolated):
        simulate_stationary(spec, pa, compute_equilibrium(spec, pa), 10, horizon=10, burn_in=1)


def test_deterministic_given_seed(w1_lap):
    spec, pa, eq = w1_lap
    a = simulate_stationary(spec, pa, eq, 50, horizon=300, burn_in=20, seed=5, batches=5)
    b = simulate_stationary(spec, pa, eq, 50, horizon=300, burn_in=20, seed=5, batches=5)
    c = simulate_stationary(spec, pa, eq, 50, horizon=300, burn_in=20, seed=6, batches=5)
    assert a.n_events == b.n_events
    assert a.cov.tobytes() == b.cov.tobytes()
    assert a.mean_queue.tobytes() == b.mean_queue.tobytes()
    assert a.cov.tobytes() != c.cov.tobytes()


def test_stats_shape_and_psd(w1_lap):
    spec, pa, eq = w1_lap
    s = simulate_stationary(spec, pa, eq, 100, horizon=400, burn_in=50, seed=1, batches=8)
    assert s.cov.shape == (3, 3)
    assert np.allclose(s.cov, s.cov.T)
    assert np.linalg.eigvalsh(s.cov).min() >= -1e-10
    assert s.cov_se.shape == (3, 3) and np.all(s.cov_se >= 0)
    assert s.batches == 8 and s.seeds == [1]
    d = s.to_dict(spec)
    assert d["idle_pools"] == [1] and len(d["mean_q_hat"]) == 2


def test_w1_queue_and_idleness_small(w1_lap):
    spec, pa, eq = w1_lap
    s = simulate_stationary(spec, pa, eq, 400, horizon=2000, burn_in=200, seed=2)
    q_hat, _ = s.mean_queue_hat
    z_hat, _ = s.mean_abs_idle_hat
    # pilot (seed 2): q_hat ~ 1e-5, |z_hat_1| ~ 0.13
    assert q_hat.max() < 0.2 and z_hat.max() < 0.2


def test_time_series_samples(w1_lap):
    spec, pa, eq = w1_lap
    s = simulate_stationary(spec, pa, eq, 20, horizon=30, burn_in=5, seed=1, batches=2,
                            sample_dt=0.5)
    assert s.samples.shape == (60, 5)  # grid on [0, horizon)
    first = SimState.near_equilibrium(spec, pa, eq, 20)
    assert s.samples[0, :3].tolist() == first.psi.tolist()


def test_empty_start(w1_lap):
    spec, pa, eq = w1_lap
    s = simulate_stationary(spec, pa, eq, 20, horizon=5, burn_in=1, seed=1, batches=1,
                            empty_start=True, sample_dt=1.0)
    assert s.samples[0].sum() == 0


def test_histogram_total_mass(single):
    pa = assign_priorities(single)
    eq = compute_equilibrium(single, pa)
    s = simulate_stationary(single, pa, eq, 3, horizon=500, burn_in=10, seed=4,
                            histogram_radix=[4, 21])
    assert s.histogram.shape == (85,)
    assert s.histogram.sum() == pytest.approx(1.0)


def test_short_fuzz_on_random_specs():
    rng = np.random.default_rng(8)
    for _ in range(5):
        spec, pa, _ = random_valid_spec(rng)
        bad, n = fuzz_invariants(spec, pa, r=int(rng.integers(2, 8)), n_events=20_000,
                                 seed=int(rng.integers(1 << 31)))
        assert (bad, n) == (0, 20_000)


def test_w1_pool1_idleness_is_order_one(w1_lap):
    # idle pool-1 servers form a birth-death chain with up-rate ~r (completions)
    # and down-rate 1.4 r (class-1 arrivals), so E|Z_1| -> (1/1.4)/(1 - 1/1.4) = 2.5
    spec, pa, eq = w1_lap
    for r in (400, 1600):
        s = simulate_stationary(spec, pa, eq, r, horizon=600, burn_in=100, seed=r)
        assert abs(s.mean_abs_idle[0] - 2.5) < max(0.15, 4 * s.mean_abs_idle_se[0])


def test_fuzz_detects_starved_queue(w1_lap):
    spec, pa, _ = w1_lap
    # class 2 waits while pool 2 has idle servers: breaks no-starvation
    broken = state(spec, 10, [10, 3, 3], [0, 4])
    bad, n = fuzz_invariants(spec, pa, 10, 1, seed=0, initial=broken)
    assert n == 1 and bad > 0
