"""Event-driven simulation of threshold-gated pairwise averaging.

Each edge of the graph carries a unit-rate Poisson clock.  Instead of
per-edge priority queues, the engine draws the next event as an
exponential holding time with rate equal to the number of active edges
followed by a uniform choice among them; the two schemes are equal in
law and this one is O(1) per event.  When the chosen edge's endpoint
values differ by at most ``theta`` they move toward each other by a
fraction ``mu``; otherwise the event is a no-op but is still logged.

Runs are pure functions of ``(master seed, stream)``.  The log records
(time, edge id, accepted, both pre-values) per event, which is enough
to replay or audit a run without re-simulating, and serializes to CSV.

On percolation subgraphs only the open edges of the chosen cluster are
active.  Closed edges never fire; skipping their clocks rescales time
but leaves the event sequence on the cluster unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from ._kernels import replay_events, simulate_window


@dataclass(frozen=True)
class ModelParams:
    """Convergence parameter ``mu`` and confidence threshold ``theta``.

    ``mu`` lies in (0, 1/2].  ``theta`` is positive in the model
    proper; ``theta = 0`` is accepted as a degenerate clock-only run
    (every event is rejected), which is convenient for studying the
    Poisson event structure on its own.
    """

    mu: float
    theta: float

    def validate(self) -> None:
        if not 0.0 < self.mu <= 0.5:
            raise ValueError(f"mu must lie in (0, 1/2], got {self.mu}")
        if not self.theta >= 0.0:
            raise ValueError(f"theta must be nonnegative, got {self.theta}")


@dataclass
class OpinionState:
    values: np.ndarray
    time: float = 0.0

    def copy(self) -> "OpinionState":
        return OpinionState(self.values.copy(), self.time)


@dataclass(frozen=True)
class Event:
    time: float
    edge: int
    accepted: bool
    pre_u: float
    pre_v: float


class RngStream:
    """Counter-addressed uniform stream: draw k is a pure function of
    (master seed, purpose, stream, k).  ``step`` consumes draws through
    this object; kernels continue from :meth:`handoff` and the counter
    is advanced afterwards, so mixing the two stays reproducible."""

    def __init__(self, master_seed: int, stream: int = 0, purpose: int = _rng.DYNAMICS):
        self.master_seed = int(master_seed)
        self.stream = int(stream)
        self.purpose = purpose
        self._seed = _rng.stream_seed(master_seed, purpose, stream)
        self.draw_index = 0

    def uniform(self) -> float:
        u = _rng.uniform_draw(self._seed, self.draw_index)
        self.draw_index += 1
        return u

    def exponential(self) -> float:
        u = self.uniform()
        return -math.log1p(-u)

    def handoff(self) -> tuple[np.uint64, np.uint64]:
        return np.uint64(self._seed), np.uint64(self.draw_index)

    def advance_to(self, draw_index: int) -> None:
        self.draw_index = int(draw_index)


class EventLog:
    """Columnar event trace: times, edge ids, acceptance, pre-values."""

    SCHEMA = "deffuant-eventlog v1"

    def __init__(self, times, edges, accepted, pre_u, pre_v):
        self.times = np.asarray(times, dtype=np.float64)
        self.edges = np.asarray(edges, dtype=np.int64)
        self.accepted = np.asarray(accepted, dtype=np.bool_)
        self.pre_u = np.asarray(pre_u, dtype=np.float64)
        self.pre_v = np.asarray(pre_v, dtype=np.float64)

    @property
    def n_events(self) -> int:
        return self.times.shape[0]

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())

    def events_until(self, t: float) -> int:
        """Number of events with time <= t."""
        return int(np.searchsorted(self.times, t, side="right"))

    def __getitem__(self, i: int) -> Event:
        return Event(float(self.times[i]), int(self.edges[i]),
                     bool(self.accepted[i]), float(self.pre_u[i]),
                     float(self.pre_v[i]))

    def validate(self, theta: float) -> None:
        if self.n_events and not (np.diff(self.times) > 0).all():
            raise ValueError("event times are not strictly increasing")
        gaps = np.abs(self.pre_u - self.pre_v)
        if not np.array_equal(self.accepted, gaps <= theta):
            raise ValueError("acceptance flags inconsistent with threshold")

    def to_csv(self, path: str, graph=None) -> None:
        """Write the log; with ``graph`` the edge endpoints are resolved
        into two extra ``u,v`` columns for graph-unaware consumers."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"# {self.SCHEMA}\n")
            if graph is None:
                fh.write("time,edge,accepted,pre_u,pre_v\n")
                for i in range(self.n_events):
                    fh.write("%.17g,%d,%d,%.17g,%.17g\n" % (
                        self.times[i], self.edges[i], int(self.accepted[i]),
                        self.pre_u[i], self.pre_v[i]))
                return
            eu = graph.edge_u[self.edges] if self.n_events else self.edges
            ev = graph.edge_v[self.edges] if self.n_events else self.edges
            fh.write("time,edge,accepted,pre_u,pre_v,u,v\n")
            for i in range(self.n_events):
                fh.write("%.17g,%d,%d,%.17g,%.17g,%d,%d\n" % (
                    self.times[i], self.edges[i], int(self.accepted[i]),
                    self.pre_u[i], self.pre_v[i], eu[i], ev[i]))

    @classmethod
    def read_csv(cls, path: str) -> "EventLog":
        with open(path, encoding="ascii") as fh:
            first = fh.readline().strip()
            if first != f"# {cls.SCHEMA}":
                raise ValueError(f"not a {cls.SCHEMA} trace")
            fh.readline()  # column header
            body = fh.read()
        if not body.strip():
            rows = np.empty((0, 5), dtype=np.float64)
        else:
            # endpoint columns, when present, are derived — drop them
            rows = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2)
        return cls(rows[:, 0], rows[:, 1].astype(np.int64),
                   rows[:, 2] != 0.0, rows[:, 3], rows[:, 4])


def apply_update(a: float, b: float, params: ModelParams):
    """One pairwise interaction; returns (a', b', accepted)."""
    if abs(a - b) <= params.theta:
        return a + params.mu * (b - a), b + params.mu * (a - b), True
    return a, b, False


def _active_array(graph, active) -> np.ndarray:
    if active is None:
        return np.arange(graph.n_edges, dtype=np.int64)
    if hasattr(active, "open_edges"):
        return active.open_edges()
    out = np.asarray(active, dtype=np.int64)
    if out.ndim != 1 or (out.size and (out.min() < 0 or out.max() >= graph.n_edges)):
        raise ValueError("active edge ids out of range")
    return out


def step(state: OpinionState, graph, params: ModelParams, rng: RngStream,
         active=None) -> Event:
    """Process one event in place and return its record."""
    act = _active_array(graph, active)
    m = act.shape[0]
    if m == 0:
        raise ValueError("no active edges")
    dt = rng.exponential() / m
    t = state.time + dt
    while t == state.time:
        t = np.nextafter(t, np.inf)
    j = min(int(rng.uniform() * m), m - 1)
    e = int(act[j])
    u, v = graph.edges[e]
    a = float(state.values[u])
    b = float(state.values[v])
    a2, b2, accepted = apply_update(a, b, params)
    state.values[u] = a2
    state.values[v] = b2
    state.time = float(t)
    return Event(float(t), e, accepted, a, b)


def run_until(state: OpinionState, graph, params: ModelParams, rng,
              horizon: float, active=None) -> tuple[OpinionState, EventLog]:
    """Process all events in (state.time, horizon]; the input state is
    left untouched and a fresh final state is returned with the log."""
    params.validate()
    if isinstance(rng, int):
        rng = RngStream(rng)
    if horizon < state.time:
        raise ValueError("horizon lies before the current time")
    act = _active_array(graph, active)
    if act.shape[0] == 0:
        raise ValueError("no active edges")
    expected = act.shape[0] * (horizon - state.time)
    capacity = int(expected + 10.0 * math.sqrt(expected + 1.0)) + 64
    seed, k0 = rng.handoff()
    while True:
        values = state.values.astype(np.float64, copy=True)
        ev_time = np.empty(capacity, dtype=np.float64)
        ev_edge = np.empty(capacity, dtype=np.int64)
        ev_acc = np.empty(capacity, dtype=np.bool_)
        ev_pre_u = np.empty(capacity, dtype=np.float64)
        ev_pre_v = np.empty(capacity, dtype=np.float64)
        n, k_next = simulate_window(values, graph.edge_u, graph.edge_v, act,
                                    params.mu, params.theta, state.time,
                                    horizon, seed, k0, ev_time, ev_edge,
                                    ev_acc, ev_pre_u, ev_pre_v)
        if n >= 0:
            break
        capacity *= 2
    rng.advance_to(int(k_next))
    log = EventLog(ev_time[:n].copy(), ev_edge[:n].copy(), ev_acc[:n].copy(),
                   ev_pre_u[:n].copy(), ev_pre_v[:n].copy())
    return OpinionState(values, float(horizon)), log


@dataclass
class RunRecord:
    """A completed run: everything audits need, nothing re-simulated."""

    graph: object
    params: ModelParams
    initial: np.ndarray
    log: EventLog
    final: np.ndarray
    horizon: float
    active: np.ndarray
    seed: int = 0
    stream: int = 0

    def state_at(self, t: float) -> np.ndarray:
        """State vector after all events with time <= t (replayed)."""
        if t > self.horizon:
            raise ValueError("time beyond the run horizon")
        n = self.log.events_until(t)
        values = self.initial.copy()
        replay_events(values, self.graph.edge_u, self.graph.edge_v,
                      self.log.edges, self.log.accepted, self.params.mu,
                      n, self.log.pre_u, self.log.pre_v, False)
        return values

    def vertex_trajectory(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Times and values of vertex ``v``, including the initial point."""
        eu = self.graph.edge_u[self.log.edges]
        ev = self.graph.edge_v[self.log.edges]
        mu = self.params.mu
        sel_u = (eu == v) & self.log.accepted
        sel_v = (ev == v) & self.log.accepted
        sel = sel_u | sel_v
        post = np.where(sel_u[sel],
                        self.log.pre_u[sel] + mu * (self.log.pre_v[sel] - self.log.pre_u[sel]),
                        self.log.pre_v[sel] + mu * (self.log.pre_u[sel] - self.log.pre_v[sel]))
        times = np.concatenate([[0.0], self.log.times[sel]])
        vals = np.concatenate([[self.initial[v]], post])
        return times, vals

    def neighbor_gaps(self, values: np.ndarray | None = None) -> np.ndarray:
        """|difference| across each active edge for the given state."""
        x = self.final if values is None else values
        return np.abs(x[self.graph.edge_u[self.active]]
                      - x[self.graph.edge_v[self.active]])


def simulate(graph, initial_values, params: ModelParams, horizon: float,
             seed: int, stream: int = 0, active=None) -> RunRecord:
    """run_until from time 0, bundled with its inputs for the audits."""
    state = OpinionState(np.asarray(initial_values, dtype=np.float64).copy(), 0.0)
    rng = RngStream(seed, stream)
    final, log = run_until(state, graph, params, rng, horizon, active=active)
    return RunRecord(graph, params, state.values, log, final.values,
                     float(horizon), _active_array(graph, active), seed, stream)


def replay_with_threshold(run: RunRecord, theta: float) -> np.ndarray:
    """Acceptance flags when the logged edge schedule is replayed with a
    different threshold (diagnostic; plain Python, small logs)."""
    values = run.initial.copy()
    mu = run.params.mu
    out = np.zeros(run.log.n_events, dtype=np.bool_)
    for i in range(run.log.n_events):
        e = run.log.edges[i]
        u = run.graph.edge_u[e]
        v = run.graph.edge_v[e]
        a = values[u]
        b = values[v]
        if abs(a - b) <= theta:
            out[i] = True
            values[u] = a + mu * (b - a)
            values[v] = b + mu * (a - b)
    return out


def quiet_intervals(source, graph, t: float) -> np.ndarray:
    """Cyclic distances between consecutive quiet edges of a 1-d torus.

    An edge is quiet when no Poisson event (accepted or not) touched it
    in [0, t].  Lengths are measured in ring positions, scanning once
    around the cycle; with q quiet edges there are exactly q lengths
    and they sum to the ring size.  ``source`` is a RunRecord (whose
    graph is used when ``graph`` is None, and whose horizon bounds t)
    or a bare EventLog, which carries no horizon to check against.
    """
    if isinstance(source, RunRecord):
        if t > source.horizon:
            raise ValueError("time beyond the run horizon")
        log = source.log
        if graph is None:
            graph = source.graph
    else:
        log = source
    positions = graph.ring_positions()
    n = log.events_until(t)
    fired = np.zeros(graph.n_edges, dtype=np.bool_)
    fired[log.edges[:n]] = True
    quiet_pos = np.sort(positions[~fired])
    if quiet_pos.size == 0:
        return np.empty(0, dtype=np.int64)
    diffs = np.diff(quiet_pos)
    wrap = quiet_pos[0] + graph.n_vertices - quiet_pos[-1]
    return np.concatenate([diffs, [wrap]]).astype(np.int64)
