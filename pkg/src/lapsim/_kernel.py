"""JIT-compiled core of the CTMC simulator.

Event index convention: ``0..I-1`` are arrivals of class ``i``;
``I + e`` is a service completion on edge ``e``.

State lives in three int64 arrays mutated in place: ``psi[E]`` (busy servers
per activity), ``q[I]`` (queue per class) and ``busy[J]`` (busy servers per
pool, always the pool sum of ``psi``).

Routing table ``route[i]`` lists the edges of class ``i`` by edge priority;
scheduling table ``sched[j]`` lists the edges of pool ``j`` by class priority.
Both are padded with -1.
"""

import math

import numpy as np
from numba import njit

TAG_ROUTED = 0
TAG_QUEUED = 1
TAG_IDLE = 2
TAG_TRANSFER = 3


@njit(cache=True)
def route_arrival(i, busy, cap, route, edge_pool):
    """Edge that an arriving class-``i`` customer takes, or -1 to queue."""
    for k in range(route.shape[1]):
        e = route[i, k]
        if e < 0:
            break
        if busy[edge_pool[e]] < cap[edge_pool[e]]:
            return e
    return -1


@njit(cache=True)
def schedule_completion(j, q, sched, edge_cls):
    """Edge whose queued customer a freed pool-``j`` server takes, or -1."""
    for k in range(sched.shape[1]):
        e = sched[j, k]
        if e < 0:
            break
        if q[edge_cls[e]] > 0:
            return e
    return -1


@njit(cache=True)
def apply_event(ev, psi, q, busy, cap, route, sched, edge_cls, edge_pool):
    """Mutate the state for event ``ev``; return ``(tag, edge)``.

    For arrivals ``edge`` is the edge taken (-1 when queued); for completions
    it is the edge that picked up a queued customer (-1 when the server idles).
    """
    n_cls = q.shape[0]
    if ev < n_cls:
        e = route_arrival(ev, busy, cap, route, edge_pool)
        if e < 0:
            q[ev] += 1
            return TAG_QUEUED, -1
        psi[e] += 1
        busy[edge_pool[e]] += 1
        return TAG_ROUTED, e
    e = ev - n_cls
    j = edge_pool[e]
    psi[e] -= 1
    busy[j] -= 1
    e2 = schedule_completion(j, q, sched, edge_cls)
    if e2 < 0:
        return TAG_IDLE, -1
    q[edge_cls[e2]] -= 1
    psi[e2] += 1
    busy[j] += 1
    return TAG_TRANSFER, e2


@njit(cache=True)
def total_rate(psi, lam_r, mu):
    rate = 0.0
    for i in range(lam_r.shape[0]):
        rate += lam_r[i]
    for e in range(psi.shape[0]):
        rate += mu[e] * psi[e]
    return rate


@njit(cache=True)
def select_event(u, rate, psi, lam_r, mu):
    """Event index for a uniform ``u`` in [0, 1) by linear scan."""
    target = u * rate
    acc = 0.0
    n_cls = lam_r.shape[0]
    last = -1
    for i in range(n_cls):
        acc += lam_r[i]
        last = i
        if target < acc:
            return i
    for e in range(psi.shape[0]):
        w = mu[e] * psi[e]
        if w > 0.0:
            acc += w
            last = n_cls + e
            if target < acc:
                return n_cls + e
    # u * rate rounded up to the total; take the last event with positive rate
    return last


@njit(cache=True)
def _accumulate(w, b, psi, q, busy, psi_center, z_center, inv_sqrt_r,
                dur, s1, s2, sq, sz, hist, radix, dev):
    n_edge = psi.shape[0]
    dur[b] += w
    for e in range(n_edge):
        dev[e] = (psi[e] - psi_center[e]) * inv_sqrt_r
    for e in range(n_edge):
        s1[b, e] += w * dev[e]
        for f in range(e, n_edge):
            s2[b, e, f] += w * dev[e] * dev[f]
    for i in range(q.shape[0]):
        sq[b, i] += w * q[i]
    for j in range(busy.shape[0]):
        sz[b, j] += w * abs(busy[j] - z_center[j])
    if hist.shape[0] > 0:
        idx = 0
        stride = 1
        over = False
        for k in range(n_edge):
            if psi[k] >= radix[k]:
                over = True
            idx += psi[k] * stride
            stride *= radix[k]
        for k in range(q.shape[0]):
            if q[k] >= radix[n_edge + k]:
                over = True
            idx += q[k] * stride
            stride *= radix[n_edge + k]
        if over:
            idx = hist.shape[0] - 1
        hist[idx] += w


@njit(cache=True)
def run_stationary(t, t_end, uniforms, psi, q, busy, cap, lam_r, mu, route, sched,
                   edge_cls, edge_pool, psi_center, z_center, inv_sqrt_r, batch_edges,
                   dur, s1, s2, sq, sz, hist, radix, sample_dt, samples, n_samples):
    """Advance until ``t_end`` or until ``uniforms`` runs out.

    Accumulates holding-time-weighted moments into the per-batch arrays for
    the portion of each holding interval that falls inside a batch window
    ``[batch_edges[b], batch_edges[b+1])``.  If ``samples`` has rows, the
    state at each multiple of ``sample_dt`` is written there.

    Returns ``(t, n_used, n_samples, n_events)``; ``n_used`` counts uniforms.
    """
    n_batches = batch_edges.shape[0] - 1
    n_edge = psi.shape[0]
    n_cls = q.shape[0]
    dev = np.empty(n_edge)
    pos = 0
    n_events = 0
    n_uni = uniforms.shape[0]
    while t < t_end and pos + 1 < n_uni:
        rate = total_rate(psi, lam_r, mu)
        if not math.isfinite(rate) or rate <= 0.0:
            raise OverflowError("total event rate is not finite and positive")
        hold = -math.log(1.0 - uniforms[pos]) / rate
        t_next = t + hold
        stop = t_next if t_next < t_end else t_end
        # time-weighted statistics on [t, stop)
        for b in range(n_batches):
            lo = batch_edges[b]
            hi = batch_edges[b + 1]
            a = t if t > lo else lo
            c = stop if stop < hi else hi
            if c > a:
                _accumulate(c - a, b, psi, q, busy, psi_center, z_center, inv_sqrt_r,
                            dur, s1, s2, sq, sz, hist, radix, dev)
        if samples.shape[0] > 0:
            while n_samples < samples.shape[0] and n_samples * sample_dt < stop:
                if n_samples * sample_dt >= t:
                    for e in range(n_edge):
                        samples[n_samples, e] = psi[e]
                    for i in range(n_cls):
                        samples[n_samples, n_edge + i] = q[i]
                n_samples += 1
        if t_next >= t_end:
            t = t_end
            pos += 1
            break
        ev = select_event(uniforms[pos + 1], rate, psi, lam_r, mu)
        apply_event(ev, psi, q, busy, cap, route, sched, edge_cls, edge_pool)
        t = t_next
        pos += 2
        n_events += 1
    return t, pos, n_samples, n_events


@njit(cache=True)
def check_state(psi, q, busy, cap, edge_cls, edge_pool):
    """Number of violated invariants: sign, capacity, pool sums, no-starvation."""
    bad = 0
    n_pool = busy.shape[0]
    sums = np.zeros(n_pool, dtype=np.int64)
    for e in range(psi.shape[0]):
        if psi[e] < 0:
            bad += 1
        sums[edge_pool[e]] += psi[e]
    for i in range(q.shape[0]):
        if q[i] < 0:
            bad += 1
    for j in range(n_pool):
        if sums[j] != busy[j]:
            bad += 1
        if busy[j] > cap[j]:
            bad += 1
    for e in range(psi.shape[0]):
        if q[edge_cls[e]] > 0 and busy[edge_pool[e]] != cap[edge_pool[e]]:
            bad += 1
    return bad


@njit(cache=True)
def run_checked(uniforms, psi, q, busy, cap, lam_r, mu, route, sched, edge_cls, edge_pool):
    """Apply ``len(uniforms) // 2`` events, checking invariants after each.

    Besides :func:`check_state`, verifies that the class totals
    ``X_i = sum_j psi_ij + q_i`` move by +1 on an arrival, -1 on a completion
    and not at all on a queue-to-server transfer.
    Returns ``(violations, events)``.
    """
    n_cls = q.shape[0]
    n_edge = psi.shape[0]
    before = np.zeros(n_cls, dtype=np.int64)
    after = np.zeros(n_cls, dtype=np.int64)
    bad = check_state(psi, q, busy, cap, edge_cls, edge_pool)
    n_events = 0
    for pos in range(0, uniforms.shape[0] - 1, 2):
        rate = total_rate(psi, lam_r, mu)
        ev = select_event(uniforms[pos + 1], rate, psi, lam_r, mu)
        for i in range(n_cls):
            before[i] = q[i]
        for e in range(n_edge):
            before[edge_cls[e]] += psi[e]
        tag, _ = apply_event(ev, psi, q, busy, cap, route, sched, edge_cls, edge_pool)
        for i in range(n_cls):
            after[i] = q[i]
        for e in range(n_edge):
            after[edge_cls[e]] += psi[e]
        for i in range(n_cls):
            expect = 0
            if ev < n_cls and i == ev:
                expect = 1
            elif ev >= n_cls and i == edge_cls[ev - n_cls]:
                expect = -1
            if after[i] - before[i] != expect:
                bad += 1
        if (ev < n_cls) != (tag == TAG_ROUTED or tag == TAG_QUEUED):
            bad += 1
        bad += check_state(psi, q, busy, cap, edge_cls, edge_pool)
        n_events += 1
    return bad, n_events


@njit(cache=True)
def run_descent(t, t_end, uniforms, psi, q, busy, cap, lam_r, mu, route, sched,
                edge_cls, edge_pool, psi_center, hit_thr2, hit_time, stay_window, max_after2):
    """Advance while tracking ``|F|^2 = sum (psi - psi_center)^2 + sum q^2``.

    ``hit_time < 0`` means no hit yet.  On the first state with
    ``|F|^2 <= hit_thr2`` the hit time is recorded and ``t_end`` shrinks to
    ``hit_time + stay_window``; from then on the running maximum of ``|F|^2``
    is kept.  Returns ``(t, t_end, n_used, hit_time, max_after2)``.
    """
    pos = 0
    n_uni = uniforms.shape[0]
    while t < t_end and pos + 1 < n_uni:
        f2 = 0.0
        for e in range(psi.shape[0]):
            d = psi[e] - psi_center[e]
            f2 += d * d
        for i in range(q.shape[0]):
            f2 += q[i] * q[i]
        if hit_time < 0.0 and f2 <= hit_thr2:
            hit_time = t
            if t + stay_window < t_end:
                t_end = t + stay_window
        if hit_time >= 0.0 and f2 > max_after2:
            max_after2 = f2
        rate = total_rate(psi, lam_r, mu)
        hold = -math.log(1.0 - uniforms[pos]) / rate
        if t + hold >= t_end:
            t = t_end
            pos += 1
            break
        ev = select_event(uniforms[pos + 1], rate, psi, lam_r, mu)
        apply_event(ev, psi, q, busy, cap, route, sched, edge_cls, edge_pool)
        t += hold
        pos += 2
    return t, t_end, pos, hit_time, max_after2
