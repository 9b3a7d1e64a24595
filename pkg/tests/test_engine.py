"""Event engine: clock laws, determinism, conservation, replay."""

import math

import numpy as np
import pytest
from scipy import stats

from deffuant.engine import (EventLog, ModelParams, OpinionState, RngStream,
                             apply_update, quiet_intervals,
                             replay_with_threshold, run_until, simulate, step)
from deffuant.initial import Uniform, sample_iid
from deffuant.lattice import LatticeSpec, build_lattice, percolate, ring
from deffuant._kernels import replay_events

EPS = np.finfo(np.float64).eps


def path_graph(n):
    return build_lattice(LatticeSpec((n,), periodic=False))


# ---------------------------------------------------------------- updates

def test_apply_update_examples():
    p = ModelParams(mu=0.5, theta=0.5)
    assert apply_update(0.2, 0.6, p) == (0.4, 0.4, True)
    assert apply_update(0.0, 0.6, p) == (0.0, 0.6, False)
    p = ModelParams(mu=0.25, theta=0.5)
    a2, b2, ok = apply_update(0.0, 0.4, p)
    assert ok
    assert a2 == pytest.approx(0.1, abs=1e-15)
    assert b2 == pytest.approx(0.3, abs=1e-15)
    # bitwise the update is exactly the two-sided averaging formula
    assert a2 == 0.0 + 0.25 * (0.4 - 0.0)
    assert b2 == 0.4 + 0.25 * (0.0 - 0.4)


def test_apply_update_boundary_gap_accepts():
    # |a - b| == theta exactly is still an accepted event
    p = ModelParams(mu=0.5, theta=0.5)
    a2, b2, ok = apply_update(0.25, 0.75, p)
    assert ok and a2 == b2 == 0.5


def test_params_validation():
    for mu, theta in [(0.0, 0.5), (0.6, 0.5), (-0.1, 0.5), (0.3, -1.0)]:
        with pytest.raises(ValueError):
            ModelParams(mu=mu, theta=theta).validate()
    ModelParams(mu=0.5, theta=0.0).validate()
    ModelParams(mu=1e-9, theta=10.0).validate()


# ------------------------------------------------------- step vs run_until

def test_step_matches_kernel_log_bit_exactly():
    graph = ring(40)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=5, stream=0)
    params = ModelParams(mu=0.3, theta=0.4)
    run = simulate(graph, init, params, horizon=3.0, seed=99)
    state = OpinionState(init.copy(), 0.0)
    rng = RngStream(99, 0)
    for i in range(run.log.n_events):
        ev = step(state, graph, params, rng)
        assert ev.time == run.log.times[i]
        assert ev.edge == run.log.edges[i]
        assert ev.accepted == bool(run.log.accepted[i])
        assert ev.pre_u == run.log.pre_u[i]
        assert ev.pre_v == run.log.pre_v[i]
    assert np.array_equal(state.values, run.final)
    assert rng.draw_index == 2 * run.log.n_events


def test_step_requires_active_edges():
    graph = ring(8)
    state = OpinionState(np.zeros(8), 0.0)
    with pytest.raises(ValueError):
        step(state, graph, ModelParams(0.5, 0.5), RngStream(1),
             active=np.empty(0, dtype=np.int64))


def test_run_until_rejects_backward_horizon():
    graph = ring(8)
    state = OpinionState(np.zeros(8), 2.0)
    with pytest.raises(ValueError):
        run_until(state, graph, ModelParams(0.5, 0.5), RngStream(1), 1.0)


def test_run_until_closed_percolation_errors():
    graph = ring(9)
    state = OpinionState(np.zeros(9), 0.0)
    with pytest.raises(ValueError):
        run_until(state, graph, ModelParams(0.5, 0.5), RngStream(1), 1.0,
                  active=np.empty(0, dtype=np.int64))


def test_run_until_at_current_time_is_empty():
    graph = ring(12)
    state = OpinionState(np.linspace(0, 1, 12), 0.0)
    final, log = run_until(state, graph, ModelParams(0.5, 0.5), RngStream(3), 0.0)
    assert log.n_events == 0
    assert np.array_equal(final.values, state.values)
    assert final.time == 0.0


def test_theta_zero_freezes_values_but_logs_events():
    graph = ring(20)
    init = np.linspace(0.0, 1.0, 20)
    run = simulate(graph, init, ModelParams(mu=0.5, theta=0.0), 5.0, seed=11)
    assert run.log.n_events > 0
    assert not run.log.accepted.any()
    assert np.array_equal(run.final, init)


def test_continuation_from_nonzero_time():
    graph = ring(15)
    params = ModelParams(0.4, 0.6)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=2, stream=0)
    rng = RngStream(77)
    mid, log1 = run_until(OpinionState(init.copy(), 0.0), graph, params, rng, 2.0)
    fin, log2 = run_until(mid, graph, params, rng, 5.0)
    assert mid.time == 2.0 and fin.time == 5.0
    if log2.n_events:
        assert log2.times[0] > 2.0
        assert log2.times[-1] <= 5.0
    combined = np.concatenate([log1.times, log2.times])
    assert (np.diff(combined) > 0).all()


# ---------------------------------------------------------------- rng laws

def test_single_edge_holding_times_are_exponential():
    graph = path_graph(2)
    init = np.array([0.0, 1.0])
    run = simulate(graph, init, ModelParams(0.5, 0.1), horizon=10000.0, seed=4)
    gaps = np.diff(np.concatenate([[0.0], run.log.times]))
    assert run.log.n_events > 9000
    p = stats.kstest(gaps, "expon").pvalue
    assert p > 0.01


def test_per_edge_event_counts_are_poisson():
    graph = ring(200)
    init = np.full(200, 0.5)
    T = 50.0
    run = simulate(graph, init, ModelParams(0.5, 1.0), horizon=T, seed=6)
    counts = np.bincount(run.log.edges, minlength=graph.n_edges)
    # bin Poisson(T) so every cell expects >= 5 counts
    lo, hi = stats.poisson.ppf([0.001, 0.999], T).astype(int)
    edges_bins = np.arange(lo, hi + 2)
    probs = stats.poisson.pmf(edges_bins[:-1], T)
    probs[0] = stats.poisson.cdf(lo, T)
    probs[-1] = stats.poisson.sf(hi - 1, T)
    observed, _ = np.histogram(np.clip(counts, lo, hi), bins=edges_bins)
    keep = probs * graph.n_edges >= 5
    obs = np.concatenate([observed[keep], [observed[~keep].sum()]])
    exp = np.concatenate([probs[keep], [probs[~keep].sum()]]) * graph.n_edges
    p = stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue
    assert p > 0.01


def test_determinism_and_stream_separation():
    graph = ring(30)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=8, stream=0)
    params = ModelParams(0.5, 0.5)
    a = simulate(graph, init, params, 10.0, seed=123, stream=0)
    b = simulate(graph, init, params, 10.0, seed=123, stream=0)
    c = simulate(graph, init, params, 10.0, seed=123, stream=1)
    assert np.array_equal(a.log.times, b.log.times)
    assert np.array_equal(a.log.edges, b.log.edges)
    assert np.array_equal(a.final, b.final)
    assert not np.array_equal(a.log.edges, c.log.edges)


def test_percolation_restricts_events_to_open_edges():
    graph = ring(60)
    sample = percolate(graph, p=0.6, seed=42, stream=0)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=9, stream=0)
    run = simulate(graph, init, ModelParams(0.5, 0.5), 20.0, seed=17,
                   active=sample)
    fired = np.unique(run.log.edges)
    assert sample.open_mask[fired].all()
    # a vertex with both incident edges closed never moves
    degree_open = np.zeros(graph.n_vertices, dtype=int)
    for e in np.nonzero(sample.open_mask)[0]:
        degree_open[graph.edge_u[e]] += 1
        degree_open[graph.edge_v[e]] += 1
    frozen = degree_open == 0
    assert frozen.any()
    assert np.array_equal(run.final[frozen], init[frozen])


# ------------------------------------------------------------- invariants

@pytest.fixture(scope="module")
def long_run():
    graph = ring(500)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=21, stream=0)
    return simulate(graph, init, ModelParams(mu=0.3, theta=0.4), 120.0, seed=22)


def test_long_run_mass_conservation(long_run):
    drift = abs(math.fsum(long_run.final) - math.fsum(long_run.initial))
    assert long_run.log.n_events > 50000
    assert drift <= 4 * EPS * long_run.log.n_accepted + 1e-14


def test_long_run_confinement_is_exact(long_run):
    lo, hi = long_run.initial.min(), long_run.initial.max()
    assert long_run.final.min() >= lo
    assert long_run.final.max() <= hi
    assert long_run.log.pre_u.min() >= lo and long_run.log.pre_u.max() <= hi


def test_long_run_accepted_jumps_bounded(long_run):
    log = long_run.log
    gaps = np.abs(log.pre_u - log.pre_v)[log.accepted]
    assert gaps.max() <= long_run.params.theta
    jump = long_run.params.mu * gaps
    assert jump.max() <= long_run.params.mu * long_run.params.theta * (1 + 1e-12)


def test_long_run_acceptance_flags_match_threshold(long_run):
    long_run.log.validate(long_run.params.theta)
    with pytest.raises(ValueError):
        long_run.log.validate(long_run.params.theta / 2)


def test_long_run_replay_is_bit_exact(long_run):
    values = long_run.initial.copy()
    bad = replay_events(values, long_run.graph.edge_u, long_run.graph.edge_v,
                        long_run.log.edges, long_run.log.accepted,
                        long_run.params.mu, long_run.log.n_events,
                        long_run.log.pre_u, long_run.log.pre_v, True)
    assert bad == 0
    assert np.array_equal(values, long_run.final)


def test_long_run_strictly_increasing_times(long_run):
    assert (np.diff(long_run.log.times) > 0).all()


def test_replay_with_threshold_reproduces_flags(long_run):
    graph = ring(40)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=31, stream=0)
    run = simulate(graph, init, ModelParams(0.3, 0.4), 10.0, seed=32)
    flags = replay_with_threshold(run, 0.4)
    assert np.array_equal(flags, run.log.accepted)


def test_all_accepted_runs_stay_accepted_under_larger_threshold():
    graph = ring(40)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=33, stream=0)
    run = simulate(graph, init, ModelParams(0.5, 1.0), 15.0, seed=34)
    assert run.log.accepted.all()
    assert replay_with_threshold(run, 1.5).all()
    assert replay_with_threshold(run, 7.0).all()


# ------------------------------------------------------------ projections

def test_state_at_endpoints_and_midpoint():
    graph = ring(25)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=41, stream=0)
    run = simulate(graph, init, ModelParams(0.4, 0.5), 8.0, seed=42)
    assert np.array_equal(run.state_at(0.0), run.initial)
    assert np.array_equal(run.state_at(8.0), run.final)
    t = 4.0
    n = run.log.events_until(t)
    values = run.initial.copy()
    for i in range(n):
        if run.log.accepted[i]:
            e = run.log.edges[i]
            u, v = graph.edge_u[e], graph.edge_v[e]
            a, b = values[u], values[v]
            values[u] = a + 0.4 * (b - a)
            values[v] = b + 0.4 * (a - b)
    assert np.array_equal(run.state_at(t), values)
    with pytest.raises(ValueError):
        run.state_at(9.0)


def test_vertex_trajectory_matches_scalar_replay():
    graph = ring(25)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=43, stream=0)
    run = simulate(graph, init, ModelParams(0.4, 0.5), 8.0, seed=44)
    v = 7
    times, vals = run.vertex_trajectory(v)
    values = init.copy()
    expect_t, expect_x = [0.0], [init[v]]
    for i in range(run.log.n_events):
        if not run.log.accepted[i]:
            continue
        e = run.log.edges[i]
        uu, vv = graph.edge_u[e], graph.edge_v[e]
        a, b = values[uu], values[vv]
        values[uu] = a + 0.4 * (b - a)
        values[vv] = b + 0.4 * (a - b)
        if v in (uu, vv):
            expect_t.append(run.log.times[i])
            expect_x.append(values[v])
    assert np.array_equal(times, np.array(expect_t))
    assert np.array_equal(vals, np.array(expect_x))
    assert vals[-1] == run.final[v]


# -------------------------------------------------------- quiet intervals

def test_quiet_intervals_before_any_event():
    graph = ring(9)
    run = simulate(graph, np.zeros(9), ModelParams(0.5, 0.5), 1.0, seed=51)
    lengths = quiet_intervals(run, None, 0.0)
    assert np.array_equal(lengths, np.ones(9, dtype=np.int64))


def test_quiet_intervals_constructed_case():
    graph = ring(6)
    log = EventLog(times=[0.1, 0.2, 0.3],
                   edges=[0, 2, 3],
                   accepted=[False, False, False],
                   pre_u=[0.0, 0.0, 0.0], pre_v=[1.0, 1.0, 1.0])
    # events at t <= 0.25: edge ids 0 and 2, ring positions 0 and 1
    lengths = quiet_intervals(log, graph, 0.25)
    assert sorted(lengths.tolist()) == [1, 1, 1, 3]
    assert lengths.sum() == 6
    # by t = 0.3 position 2 fired as well
    lengths = quiet_intervals(log, graph, 0.3)
    assert sorted(lengths.tolist()) == [1, 1, 4]


def test_quiet_intervals_all_fired_is_empty():
    graph = ring(5)
    run = simulate(graph, np.zeros(5), ModelParams(0.5, 0.5), 40.0, seed=52)
    assert np.unique(run.log.edges).size == 5
    assert quiet_intervals(run, None, 40.0).size == 0


def test_quiet_intervals_beyond_horizon_errors():
    graph = ring(5)
    run = simulate(graph, np.zeros(5), ModelParams(0.5, 0.5), 1.0, seed=53)
    with pytest.raises(ValueError):
        quiet_intervals(run, None, 2.0)


def test_quiet_intervals_need_ring_geometry():
    graph = build_lattice(LatticeSpec((4, 4), periodic=True))
    log = EventLog([], [], [], [], [])
    with pytest.raises(ValueError):
        quiet_intervals(log, graph, 0.0)


# ---------------------------------------------------------- serialization

def test_eventlog_csv_round_trip(tmp_path, long_run):
    src = long_run.log
    # keep the file small: first 500 events
    small = EventLog(src.times[:500], src.edges[:500], src.accepted[:500],
                     src.pre_u[:500], src.pre_v[:500])
    path = tmp_path / "trace.csv"
    small.to_csv(str(path))
    back = EventLog.read_csv(str(path))
    assert np.array_equal(back.times, small.times)
    assert np.array_equal(back.edges, small.edges)
    assert np.array_equal(back.accepted, small.accepted)
    assert np.array_equal(back.pre_u, small.pre_u)
    assert np.array_equal(back.pre_v, small.pre_v)


def test_eventlog_csv_endpoint_columns(tmp_path, long_run):
    src = long_run.log
    small = EventLog(src.times[:200], src.edges[:200], src.accepted[:200],
                     src.pre_u[:200], src.pre_v[:200])
    path = tmp_path / "trace.csv"
    small.to_csv(str(path), graph=long_run.graph)
    lines = path.read_text().splitlines()
    assert lines[1] == "time,edge,accepted,pre_u,pre_v,u,v"
    first = lines[2].split(",")
    e = int(first[1])
    assert int(first[5]) == long_run.graph.edge_u[e]
    assert int(first[6]) == long_run.graph.edge_v[e]
    # the derived columns are ignored on read
    back = EventLog.read_csv(str(path))
    assert np.array_equal(back.times, small.times)
    assert np.array_equal(back.edges, small.edges)


def test_eventlog_csv_empty_round_trip(tmp_path):
    path = tmp_path / "empty.csv"
    EventLog([], [], [], [], []).to_csv(str(path))
    back = EventLog.read_csv(str(path))
    assert back.n_events == 0


def test_eventlog_csv_rejects_other_schema(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# some-other-file v9\ntime,edge\n")
    with pytest.raises(ValueError):
        EventLog.read_csv(str(path))
