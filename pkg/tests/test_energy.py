"""Energy ledgers, conservation audits, and threshold-bound oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deffuant.energy import (BoundResult, EnergyFn, audit_run,
                             consensus_bound_abs, consensus_bound_optimal,
                             convex_order_monitor, loss_of_update,
                             mean_residual_life, quadratic_loss,
                             total_energy_field)
from deffuant.engine import ModelParams, simulate
from deffuant.initial import (Beta, Discrete, Pareto, Uniform, UnionUniform,
                              sample_iid)
from deffuant.lattice import ring

REMARK_LAW = Discrete(atoms=(0.0, 2.0 / 3.0, 1.0),
                      weights=(1.0 / 3.0, 1.0 / 2.0, 1.0 / 6.0))
TWO_POINT_HALF = Discrete(atoms=(0.0, 0.5, 1.0),
                          weights=(9.0 / 20.0, 1.0 / 10.0, 9.0 / 20.0))
THREE_ATOMS = Discrete(atoms=(0.0, 0.5, 1.0),
                       weights=(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0))
SPLIT = UnionUniform(intervals=((0.0, 0.125), (0.875, 1.0)))


def small_run(seed=60, n=64, mu=0.3, theta=0.5, horizon=30.0):
    graph = ring(n)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=seed, stream=0)
    return simulate(graph, init, ModelParams(mu, theta), horizon, seed=seed + 1)


# -------------------------------------------------------------- energies

def test_energy_constructors_validate():
    for fn in (EnergyFn.quadratic(), EnergyFn.absolute(0.5),
               EnergyFn.one_bend(0.3, -2.0, 1.0),
               EnergyFn.tabulated([0, 0.5, 1], [1, 0, 2])):
        fn.validate()
        xs = np.linspace(0, 1, 101)
        assert (fn(xs) >= -1e-12).all()
        assert fn(xs).min() == pytest.approx(0.0, abs=1e-12)


def test_energy_rejects_non_convex():
    with pytest.raises(ValueError):
        EnergyFn.one_bend(0.5, 1.0, -1.0)
    with pytest.raises(ValueError):
        EnergyFn.tabulated([0, 0.5, 1], [0, 1, 0])
    with pytest.raises(ValueError):
        EnergyFn.tabulated([0, 0.5, 0.5], [0, 1, 2])


def test_loss_examples():
    assert loss_of_update(0.0, 0.4, 0.5, EnergyFn.quadratic()) == \
        pytest.approx(0.08, abs=1e-15)
    assert loss_of_update(0.2, 0.6, 0.5, EnergyFn.absolute(0.5)) == \
        pytest.approx(0.2, abs=1e-15)
    for fn in (EnergyFn.quadratic(), EnergyFn.absolute(0.5),
               EnergyFn.one_bend(0.25, -0.5, 3.0)):
        assert loss_of_update(0.37, 0.37, 0.4, fn) == 0.0


@given(a=st.floats(0, 1), b=st.floats(0, 1),
       mu=st.floats(0.01, 0.5), m=st.floats(0.05, 0.95),
       r=st.floats(0.01, 100.0))
@settings(max_examples=200, deadline=None)
def test_loss_nonnegative_for_convex_energies(a, b, mu, m, r):
    for fn in (EnergyFn.quadratic(), EnergyFn.absolute(m),
               EnergyFn.one_bend(m, -r, 1.0)):
        assert loss_of_update(a, b, mu, fn) >= -1e-13


@given(a=st.floats(0, 1), b=st.floats(0, 1), mu=st.floats(0.01, 0.5))
@settings(max_examples=200, deadline=None)
def test_quadratic_loss_matches_closed_form(a, b, mu):
    diff = loss_of_update(a, b, mu, EnergyFn.quadratic())
    closed = quadratic_loss(a, b, mu)
    assert diff == pytest.approx(closed, abs=1e-14, rel=1e-10)


# ---------------------------------------------------------------- audits

def test_audit_theta_zero_run():
    graph = ring(30)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=1, stream=0)
    run = simulate(graph, init, ModelParams(0.5, 0.0), 10.0, seed=2)
    audit = audit_run(run, EnergyFn.quadratic())
    assert audit.passed
    assert audit.n_accepted == 0
    assert audit.max_global_drift == 0.0
    assert (audit.ledger.loss == 0).all()
    assert np.isnan(audit.ledger.last_accept_time).all()


@pytest.mark.parametrize("fn_name", ["quadratic", "absolute"])
def test_audit_passes_on_random_run(fn_name):
    fn = EnergyFn.quadratic() if fn_name == "quadratic" else EnergyFn.absolute(0.5)
    run = small_run()
    audit = audit_run(run, fn)
    assert audit.passed
    assert audit.replay_mismatches == 0
    assert audit.min_loss >= -1e-15
    assert audit.max_pairwise_residual <= 1e-15
    assert audit.max_global_drift <= 1e-9
    assert abs(audit.mass_drift) <= 1e-11
    assert audit.first_violation == -1


def test_audit_ledger_matches_brute_force():
    run = small_run(seed=70, n=32, horizon=8.0)
    fn = EnergyFn.quadratic()
    audit = audit_run(run, fn)
    ledger = np.zeros(run.graph.n_edges)
    last = np.full(run.graph.n_edges, np.nan)
    for i in range(run.log.n_events):
        if not run.log.accepted[i]:
            continue
        e = run.log.edges[i]
        a, b = run.log.pre_u[i], run.log.pre_v[i]
        ledger[e] += loss_of_update(a, b, run.params.mu, fn)
        last[e] = run.log.times[i]
    assert np.allclose(audit.ledger.loss, ledger, atol=1e-15)
    assert np.array_equal(np.isnan(audit.ledger.last_accept_time), np.isnan(last))
    both = ~np.isnan(last)
    assert np.array_equal(audit.ledger.last_accept_time[both], last[both])
    assert (np.diff(np.compress(both, last)) != 0).all()


def test_audit_detects_corrupted_log():
    run = small_run(seed=80, n=32, horizon=8.0)
    j = int(np.nonzero(run.log.accepted)[0][5])
    run.log.pre_u[j] += 0.125
    audit = audit_run(run, EnergyFn.quadratic())
    assert audit.replay_mismatches > 0
    assert not audit.passed


def test_initial_mean_quadratic_energy_of_uniform():
    graph = ring(10000)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=90, stream=0)
    fn = EnergyFn.quadratic()
    assert float(fn(init).mean()) == pytest.approx(1.0 / 3.0, abs=0.01)


def test_total_energy_field_conserves_global_sum():
    run = small_run(seed=100)
    for fn in (EnergyFn.quadratic(), EnergyFn.absolute(0.5)):
        audit = audit_run(run, fn)
        field = total_energy_field(run, fn, audit.ledger)
        field.validate()
        total = math.fsum(field.total_energy.tolist())
        initial = math.fsum(fn(run.initial).tolist())
        assert abs(total - initial) <= 1e-9


# ------------------------------------------------------ threshold bounds

def test_bound_abs_oracles():
    assert consensus_bound_abs(Uniform(0.0, 1.0)) == 0.75
    assert consensus_bound_abs(THREE_ATOMS) == pytest.approx(5.0 / 6.0, rel=1e-12)
    assert consensus_bound_abs(Discrete(atoms=(0.5,), weights=(1.0,))) == 0.5
    with pytest.raises(ValueError):
        consensus_bound_abs(Uniform(-0.2, 0.5))
    with pytest.raises(ValueError):
        consensus_bound_abs(Pareto(shape=3.0, scale=1.0))


def test_bound_optimal_asymmetric_three_atom_law():
    res = consensus_bound_optimal(REMARK_LAW)
    assert res.theta == pytest.approx(7.0 / 9.0, abs=1e-6)
    assert res.bend == pytest.approx(2.0 / 3.0, abs=1e-3)
    assert res.ratio == pytest.approx(0.25, abs=1e-2)
    # the witness inequality is tight at the bound
    mu_e = res.ratio * (2.0 / 9.0) + 1.0 / 18.0
    assert max(res.bend + mu_e, 1 - res.bend + mu_e / res.ratio) == \
        pytest.approx(res.theta, abs=1e-9)


def test_bound_optimal_uniform_is_three_quarters():
    res = consensus_bound_optimal(Uniform(0.0, 1.0))
    assert res.theta == pytest.approx(0.75, abs=1e-6)
    assert res.bend == pytest.approx(0.5, abs=1e-3)
    assert res.ratio == pytest.approx(1.0, abs=1e-2)
    assert res.jensen_floor == 0.5


def test_bound_optimal_two_point_with_small_center_mass():
    res = consensus_bound_optimal(TWO_POINT_HALF)
    assert res.theta == pytest.approx(0.95, abs=1e-6)


@pytest.mark.parametrize("spec", [
    Uniform(0.0, 1.0), Beta(2.0, 5.0), Beta(0.5, 0.5), THREE_ATOMS,
    REMARK_LAW, TWO_POINT_HALF, SPLIT, Uniform(0.2, 0.9),
])
def test_bound_optimal_between_floor_and_abs_bound(spec):
    res = consensus_bound_optimal(spec)
    assert res.theta <= consensus_bound_abs(spec) + 1e-12
    assert res.theta >= res.jensen_floor - 1e-12
    res.witness.validate()


def test_bound_optimal_rejects_degenerate():
    with pytest.raises(ValueError):
        consensus_bound_optimal(Discrete(atoms=(0.4,), weights=(1.0,)))


def test_mean_residual_life_oracles():
    half = Uniform(0.0, 0.5)
    assert mean_residual_life(half, 0.0) == pytest.approx(0.25, abs=1e-15)
    assert mean_residual_life(half, 0.3) == pytest.approx(0.4, abs=1e-14)
    for t in np.linspace(0.0, 0.49, 20):
        assert mean_residual_life(half, t) == pytest.approx(0.25 + t / 2, abs=1e-12)
    unit = Uniform(0.0, 1.0)
    for t in np.linspace(0.0, 0.97, 15):
        assert mean_residual_life(unit, t) == pytest.approx((1 + t) / 2, abs=1e-12)
        assert mean_residual_life(unit, t) >= t
    atom = Discrete(atoms=(0.7,), weights=(1.0,))
    assert mean_residual_life(atom, 0.5) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        mean_residual_life(atom, 0.7)
    with pytest.raises(ValueError):
        mean_residual_life(half, 0.5)


# ---------------------------------------------------------- convex order

def test_convex_order_theta_zero_trivial():
    graph = ring(30)
    init = sample_iid(Uniform(0.0, 1.0), graph, seed=3, stream=0)
    run = simulate(graph, init, ModelParams(0.5, 0.0), 10.0, seed=4)
    for rep in convex_order_monitor(run):
        assert rep.n_checked == 0
        assert rep.n_violations == 0


def test_convex_order_no_violations_on_random_runs():
    for seed in (110, 111, 112):
        run = small_run(seed=seed)
        for rep in convex_order_monitor(run):
            assert rep.n_violations == 0, rep
            assert rep.first_violation == -1
            assert rep.n_checked == run.log.n_accepted


def test_convex_order_quadratic_drop_matches_formula():
    run = small_run(seed=120)
    log = run.log
    acc = log.accepted
    a, b = log.pre_u[acc], log.pre_v[acc]
    mu = run.params.mu
    a2, b2 = a + mu * (b - a), b + mu * (a - b)
    delta = (a2 ** 2 + b2 ** 2) - (a ** 2 + b ** 2)
    assert np.abs(delta + quadratic_loss(a, b, mu)).max() <= 1e-13


def test_convex_order_linear_control_is_constant():
    run = small_run(seed=130)
    up = [("linear", lambda x: 3.0 * x + 1.0)]
    down = [("neg-linear", lambda x: -3.0 * x - 1.0)]
    rep_up = convex_order_monitor(run, up)[0]
    rep_down = convex_order_monitor(run, down)[0]
    assert rep_up.n_violations == 0
    assert rep_down.n_violations == 0
    assert max(rep_up.max_increase, rep_down.max_increase) <= 1e-13
