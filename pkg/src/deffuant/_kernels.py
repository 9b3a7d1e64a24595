"""numba kernels for the event loop and cluster labeling.

Everything here is deterministic integer/IEEE arithmetic: no fastmath,
no threading inside a kernel, so a (seed, stream) pair fixes the full
trajectory bit-for-bit on every platform.  The uniform draws mirror
:mod:`deffuant._rng` exactly (SplitMix64 indexed by a draw counter);
the test suite cross-checks the two implementations.

Two simulation kernels exist on purpose:

* :func:`simulate_window` carries real event times (exponential holding
  times) and writes the full event log.  Audits, SAD reconstruction and
  quiet-interval statistics run on top of it.
* :func:`simulate_count` advances an event-count clock only.  Because
  edge choices are independent of holding times, a run of ``n`` events
  has the same law as a timed run conditioned on ``n`` events; the
  experiment layer draws ``n`` (Poisson) and any time-window cuts
  (binomial) outside the kernel.  Dropping the per-event ``log`` call
  roughly triples throughput, which is what makes the replica sweeps
  cheap on one core.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _u01(s0, k):
    # draw k (0-based) of stream s0, uniform on [0, 1)
    return float(_mix64(s0 + (k + np.uint64(1)) * _GOLD) >> np.uint64(11)) * _INV_2_53


@njit(cache=True, nogil=True)
def u01_batch(s0, k0, out):
    """Fill ``out`` with consecutive uniform draws; test hook."""
    k = np.uint64(k0)
    for i in range(out.shape[0]):
        out[i] = _u01(s0, k)
        k += np.uint64(1)


@njit(cache=True, nogil=True)
def simulate_window(values, edge_u, edge_v, active, mu, theta, t0, t1, s0, k0,
                    ev_time, ev_edge, ev_accepted, ev_pre_u, ev_pre_v):
    """Run the timed event loop on ``[t0, t1]`` with full logging.

    ``values`` is mutated in place.  Each event consumes two draws, in
    order: holding time, then edge choice.  Returns
    ``(n_events, k_next)`` where ``k_next`` is the next unused draw
    index, or ``(-1, k0)`` if the log buffers are too small (caller
    restarts from a copy of the initial state with larger buffers).
    Event times are strictly increasing: a holding time that would not
    move the float clock is bumped by one ulp.
    """
    m = active.shape[0]
    cap = ev_time.shape[0]
    rate = float(m)
    k = np.uint64(k0)
    t = t0
    n = 0
    while True:
        u = _u01(s0, k)
        k += np.uint64(1)
        dt = -np.log1p(-u) / rate
        t_next = t + dt
        if t_next > t1:
            break
        while t_next == t:
            t_next = np.nextafter(t_next, np.inf)
        t = t_next
        u = _u01(s0, k)
        k += np.uint64(1)
        j = int(u * m)
        if j >= m:
            j = m - 1
        e = active[j]
        a = values[edge_u[e]]
        b = values[edge_v[e]]
        acc = abs(a - b) <= theta
        if n >= cap:
            return -1, np.uint64(k0)
        ev_time[n] = t
        ev_edge[n] = e
        ev_accepted[n] = acc
        ev_pre_u[n] = a
        ev_pre_v[n] = b
        if acc:
            values[edge_u[e]] = a + mu * (b - a)
            values[edge_v[e]] = b + mu * (a - b)
        n += 1
    return n, k


@njit(cache=True, nogil=True)
def simulate_count(values, edge_u, edge_v, active, mu, theta, n_events, s0, k0,
                   last_accept, accept_count, snap_after, snaps):
    """Run ``n_events`` events on the count clock, statistics only.

    One draw per event (edge choice).  ``last_accept[e]`` receives the
    0-based index of the last accepted event on edge ``e`` (-1 if
    none), ``accept_count[e]`` the number of accepted events there.
    ``snap_after`` holds ascending cumulative event counts; after each
    one the state is copied into the matching row of ``snaps``.
    Returns the next unused draw index.
    """
    m = active.shape[0]
    n_snap = snap_after.shape[0]
    c = 0
    while c < n_snap and snap_after[c] == 0:
        snaps[c, :] = values
        c += 1
    k = np.uint64(k0)
    for i in range(n_events):
        u = _u01(s0, k)
        k += np.uint64(1)
        j = int(u * m)
        if j >= m:
            j = m - 1
        e = active[j]
        a = values[edge_u[e]]
        b = values[edge_v[e]]
        if abs(a - b) <= theta:
            values[edge_u[e]] = a + mu * (b - a)
            values[edge_v[e]] = b + mu * (a - b)
            last_accept[e] = i
            accept_count[e] += 1
        if c < n_snap and i + 1 == snap_after[c]:
            snaps[c, :] = values
            c += 1
    return k


@njit(cache=True, nogil=True)
def replay_events(values, edge_u, edge_v, ev_edge, ev_accepted, mu, n_events,
                  ev_pre_u, ev_pre_v, verify):
    """Replay a logged event sequence on top of ``values``.

    With ``verify`` set, compares the state against the logged
    pre-values event by event and returns the number of exact
    mismatches (0 means the log is internally consistent with the
    update rule).  ``values`` ends up in the state after
    ``n_events`` events.
    """
    bad = 0
    for i in range(n_events):
        e = ev_edge[i]
        a = values[edge_u[e]]
        b = values[edge_v[e]]
        if verify and (a != ev_pre_u[i] or b != ev_pre_v[i]):
            bad += 1
        if ev_accepted[i]:
            values[edge_u[e]] = a + mu * (b - a)
            values[edge_v[e]] = b + mu * (a - b)
    return bad


@njit(cache=True, nogil=True)
def union_find_labels(n_vertices, edge_u, edge_v, open_mask):
    """Root array of the union-find over open edges, path-compressed."""
    parent = np.arange(n_vertices, dtype=np.int64)
    size = np.ones(n_vertices, dtype=np.int64)
    for e in range(edge_u.shape[0]):
        if not open_mask[e]:
            continue
        ru = edge_u[e]
        while parent[ru] != ru:
            parent[ru] = parent[parent[ru]]
            ru = parent[ru]
        rv = edge_v[e]
        while parent[rv] != rv:
            parent[rv] = parent[parent[rv]]
            rv = parent[rv]
        if ru == rv:
            continue
        if size[ru] < size[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        size[ru] += size[rv]
    for v0 in range(n_vertices):
        r = v0
        while parent[r] != r:
            r = parent[r]
        w = v0
        while parent[w] != r:
            nxt = parent[w]
            parent[w] = r
            w = nxt
    return parent


@njit(cache=True, nogil=True)
def cluster_wraps(member, indptr, nbr_vertex, nbr_axis, nbr_step, dim):
    """True if the marked cluster wraps around a periodic axis.

    ``member`` flags the cluster's vertices.  The open-edge adjacency
    is given in CSR form; ``nbr_step`` is the +-1 lift step along
    ``nbr_axis`` from the source vertex to the neighbor.  The cluster
    is lifted to the universal cover by BFS; any open edge whose lift
    increment disagrees with the BFS assignment closes a cycle with
    nonzero winding, i.e. the cluster wraps.
    """
    n = member.shape[0]
    lift = np.zeros((n, dim), dtype=np.int64)
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    for start in range(n):
        if not member[start] or seen[start]:
            continue
        seen[start] = True
        queue[0] = start
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            for ptr in range(indptr[u], indptr[u + 1]):
                v = nbr_vertex[ptr]
                ax = nbr_axis[ptr]
                if not seen[v]:
                    seen[v] = True
                    for a in range(dim):
                        lift[v, a] = lift[u, a]
                    lift[v, ax] += nbr_step[ptr]
                    queue[tail] = v
                    tail += 1
                else:
                    for a in range(dim):
                        want = lift[u, a]
                        if a == ax:
                            want += nbr_step[ptr]
                        if lift[v, a] != want:
                            return True
    return False
