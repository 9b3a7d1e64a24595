"""Convex-energy bookkeeping, conservation audits, and threshold bounds.

A convex function E turns each accepted averaging event into a
nonnegative *loss* (E(a)+E(b)) - (E(a')+E(b')).  Crediting half of an
edge's accumulated loss to each endpoint makes the per-vertex total

    W_tot(v) = E(value(v)) + 1/2 * sum of losses on incident edges

exactly conserved pairwise at every update, so on a finite graph the
global sum of vertex energies plus all edge losses telescopes to its
initial value; :func:`audit_run` replays a log and checks both facts
against accumulated rounding.  The same convexity argument bounds the
confidence threshold above which no edge can stay blocked forever:
:func:`consensus_bound_optimal` searches the one-bend piecewise-linear
energies, which are sufficient for the sharpest such bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import replay_events
from .initial import (describe, mean_abs_deviation, mean_of, minus_part_mean,
                      plus_part_mean, survival, tail_mean)

_PHI = (math.sqrt(5.0) - 1.0) / 2.0  # golden-section ratio


# ------------------------------------------------------------ energies

class EnergyFn:
    """Convex energy on a closed domain, shifted so its minimum is 0."""

    def __init__(self, label, raw, domain, shift):
        self.label = label
        self._raw = raw
        self.domain = (float(domain[0]), float(domain[1]))
        self.shift = float(shift)

    @classmethod
    def quadratic(cls, domain=(0.0, 1.0)):
        lo, hi = domain
        raw = lambda x: np.square(x)
        shift = 0.0 if lo <= 0.0 <= hi else min(lo * lo, hi * hi)
        return cls("quadratic", raw, domain, shift)

    @classmethod
    def absolute(cls, center=0.5, domain=(0.0, 1.0)):
        lo, hi = domain
        raw = lambda x: np.abs(np.asarray(x, dtype=np.float64) - center)
        shift = 0.0 if lo <= center <= hi else min(abs(lo - center), abs(hi - center))
        return cls(f"absolute[{center:g}]", raw, domain, shift)

    @classmethod
    def one_bend(cls, bend, left_slope, right_slope, domain=(0.0, 1.0)):
        if left_slope > right_slope:
            raise ValueError("one-bend energy needs left slope <= right slope")
        lo, hi = domain
        m, ls, rs = float(bend), float(left_slope), float(right_slope)

        def raw(x):
            x = np.asarray(x, dtype=np.float64)
            return np.where(x < m, ls * (x - m), rs * (x - m))

        if ls <= 0.0 <= rs:
            shift = 0.0 if lo <= m <= hi else min(raw(lo), raw(hi))
        else:
            shift = min(raw(lo), raw(hi))
        return cls(f"one-bend[{m:g},{ls:g},{rs:g}]", raw, domain, float(shift))

    @classmethod
    def tabulated(cls, xs, ys):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.ndim != 1 or xs.size < 2 or not (np.diff(xs) > 0).all():
            raise ValueError("knots must be strictly increasing")
        slopes = np.diff(ys) / np.diff(xs)
        if (np.diff(slopes) < -1e-12).any():
            raise ValueError("tabulated energy is not convex")
        raw = lambda x: np.interp(x, xs, ys)
        return cls("tabulated", raw, (xs[0], xs[-1]), float(ys.min()))

    def __call__(self, x):
        return self._raw(x) - self.shift

    def validate(self, n_check: int = 257) -> None:
        """Convexity and nonnegativity on a midpoint grid."""
        xs = np.linspace(self.domain[0], self.domain[1], n_check)
        vals = self(xs)
        if (vals < -1e-12).any():
            raise ValueError("energy is negative after normalization")
        mid = self(0.5 * (xs[:-1] + xs[1:]))
        if (mid > 0.5 * (vals[:-1] + vals[1:]) + 1e-12).any():
            raise ValueError("energy fails midpoint convexity")


def loss_of_update(a, b, mu: float, fn: EnergyFn):
    """Energy lost by one accepted update; >= 0 for convex ``fn``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a2 = a + mu * (b - a)
    b2 = b + mu * (a - b)
    out = (fn(a) + fn(b)) - (fn(a2) + fn(b2))
    return float(out) if out.ndim == 0 else out


def quadratic_loss(a, b, mu: float):
    """Closed form of the quadratic-energy loss: 2 mu (1-mu) (a-b)^2."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    out = 2.0 * mu * (1.0 - mu) * d * d
    return float(out) if out.ndim == 0 else out


# -------------------------------------------------------------- audits

@dataclass
class EdgeLossLedger:
    loss: np.ndarray
    last_accept_time: np.ndarray

    def validate(self) -> None:
        if (self.loss < 0).any():
            raise ValueError("negative cumulative loss")


@dataclass
class TotalEnergyField:
    vertex_energy: np.ndarray
    total_energy: np.ndarray

    def validate(self) -> None:
        if (self.vertex_energy < -1e-12).any():
            raise ValueError("negative vertex energy")
        if (self.total_energy < self.vertex_energy - 1e-12).any():
            raise ValueError("total energy below vertex energy")


@dataclass
class EnergyAudit:
    energy: str
    n_events: int
    n_accepted: int
    mass_drift: float
    max_global_drift: float
    min_loss: float
    max_pairwise_residual: float
    replay_mismatches: int
    first_violation: int
    passed: bool
    ledger: EdgeLossLedger


def audit_run(run, fn: EnergyFn, checkpoints: int = 8,
              loss_floor: float = -1e-15,
              drift_tol: float = 1e-6) -> EnergyAudit:
    """Replay a logged run and check the conservation ledger.

    Checks, in order: the log replays bit-exactly from the initial
    state; every per-event loss clears ``loss_floor``; the pairwise
    identity E(a')+E(b')+loss == E(a)+E(b) holds to rounding; and the
    global sum of vertex energies plus accumulated losses stays within
    ``drift_tol`` of its initial value at every checkpoint.  The first
    violating event index (or -1) and an overall verdict are reported.
    """
    fn.validate()
    log = run.log
    graph = run.graph
    mu = run.params.mu

    values = run.initial.copy()
    mismatches = replay_events(values, graph.edge_u, graph.edge_v, log.edges,
                               log.accepted, mu, log.n_events, log.pre_u,
                               log.pre_v, True)
    replay_ok = mismatches == 0 and np.array_equal(values, run.final)

    acc = log.accepted
    acc_idx = np.nonzero(acc)[0]
    a = log.pre_u[acc_idx]
    b = log.pre_v[acc_idx]
    a2 = a + mu * (b - a)
    b2 = b + mu * (a - b)
    ea, eb, ea2, eb2 = fn(a), fn(b), fn(a2), fn(b2)
    losses = (ea + eb) - (ea2 + eb2)
    residual = np.abs((ea2 + eb2 + losses) - (ea + eb))

    ledger_loss = np.zeros(graph.n_edges, dtype=np.float64)
    np.add.at(ledger_loss, log.edges[acc_idx], losses)
    last_t = np.full(graph.n_edges, np.nan)
    last_t[log.edges[acc_idx]] = log.times[acc_idx]  # times ascend
    ledger = EdgeLossLedger(ledger_loss, last_t)

    e0 = math.fsum(fn(run.initial).tolist())
    max_drift = 0.0
    marks = np.unique(np.linspace(0, log.n_events, checkpoints + 1).astype(np.int64))
    for k in marks:
        state = run.initial.copy()
        replay_events(state, graph.edge_u, graph.edge_v, log.edges,
                      log.accepted, mu, int(k), log.pre_u, log.pre_v, False)
        n_acc_k = int(np.searchsorted(acc_idx, k))
        total = math.fsum(fn(state).tolist()) + math.fsum(losses[:n_acc_k].tolist())
        max_drift = max(max_drift, abs(total - e0))

    min_loss = float(losses.min()) if losses.size else 0.0
    bad = np.nonzero(losses < loss_floor)[0]
    first_violation = int(acc_idx[bad[0]]) if bad.size else -1
    passed = (replay_ok and first_violation < 0 and max_drift <= drift_tol)

    return EnergyAudit(
        energy=fn.label,
        n_events=log.n_events,
        n_accepted=int(acc_idx.size),
        mass_drift=float(math.fsum(run.final.tolist())
                         - math.fsum(run.initial.tolist())),
        max_global_drift=float(max_drift),
        min_loss=min_loss,
        max_pairwise_residual=float(residual.max()) if residual.size else 0.0,
        replay_mismatches=int(mismatches),
        first_violation=first_violation,
        passed=passed,
        ledger=ledger,
    )


def total_energy_field(run, fn: EnergyFn,
                       ledger: EdgeLossLedger | None = None) -> TotalEnergyField:
    """Final vertex energies and totals with half-edge loss credits."""
    if ledger is None:
        ledger = audit_run(run, fn).ledger
    vertex = fn(run.final)
    credit = np.zeros(run.graph.n_vertices, dtype=np.float64)
    np.add.at(credit, run.graph.edge_u, 0.5 * ledger.loss)
    np.add.at(credit, run.graph.edge_v, 0.5 * ledger.loss)
    field = TotalEnergyField(vertex, vertex + credit)
    field.validate()
    return field


# ------------------------------------------------------ threshold bounds

def _check_unit_support(spec):
    desc = describe(spec)
    if not desc.bounded or desc.lower < 0.0 or desc.upper > 1.0:
        raise ValueError("support must lie in [0, 1]; affine-rescale first")
    return desc


def consensus_bound_abs(spec) -> float:
    """1/2 + E|initial - 1/2|: above this threshold no edge can stay
    blocked, by the |x - 1/2| energy argument."""
    _check_unit_support(spec)
    return 0.5 + mean_abs_deviation(spec, 0.5)


@dataclass(frozen=True)
class BoundResult:
    theta: float
    bend: float
    ratio: float
    witness: EnergyFn
    jensen_floor: float


def _theta_for_bend(spec, m: float) -> tuple[float, float]:
    """(best threshold, slope ratio) for the witness r(m-x)^+ + (x-m)^+.

    Blocking at threshold theta forces min{E(theta), E(1-theta)} <=
    E[E(initial)].  For this witness the condition fails for all
    theta > max(m + mu_E, 1 - m + mu_E / r) with mu_E = r M- + M+,
    where M-+ are the mean deviations below/above the bend; the ratio
    balancing the two branches is the positive root of a quadratic.
    """
    m_minus = minus_part_mean(spec, m)
    m_plus = plus_part_mean(spec, m)
    if m_minus <= 0.0:
        return max(m + m_plus, 1.0 - m), math.inf
    if m_plus <= 0.0:
        return max(m, 1.0 - m + m_minus), 0.0
    bq = 2.0 * m - 1.0 + m_plus - m_minus
    r = (-bq + math.sqrt(bq * bq + 4.0 * m_minus * m_plus)) / (2.0 * m_minus)
    mu_e = r * m_minus + m_plus
    return max(m + mu_e, 1.0 - m + mu_e / r), r


def consensus_bound_optimal(spec, tol: float = 1e-6) -> BoundResult:
    """Best one-bend witness bound: the least threshold above which the
    blocking inequality fails for some piecewise-linear convex energy.

    Searches bend points over support atoms plus a uniform grid, then
    golden-section refinement; the slope ratio is solved in closed form
    per bend.  The result can never undercut max(mean, 1 - mean): a
    blocked edge straddling the mean is consistent with any energy.
    """
    desc = _check_unit_support(spec)
    if desc.upper == desc.lower:
        raise ValueError("degenerate (single-point) law has no bound")

    candidates = set(np.linspace(0.001, 0.999, 999).tolist())
    base = getattr(spec, "base", None)
    atoms = getattr(spec, "atoms", None) or getattr(base, "atoms", None)
    if atoms is not None:
        candidates.update(float(x) for x in atoms)
    intervals = getattr(spec, "intervals", None) or getattr(base, "intervals", None)
    if intervals is not None:
        candidates.update(float(x) for ab in intervals for x in ab)
    candidates.add(0.5 * (desc.lower + desc.upper))
    candidates = {m for m in candidates if 0.0 < m < 1.0}

    best_m, best_theta, best_r = None, math.inf, 1.0
    for m in sorted(candidates):
        theta, r = _theta_for_bend(spec, m)
        if theta < best_theta:
            best_m, best_theta, best_r = m, theta, r

    lo = max(best_m - 2e-3, 1e-9)
    hi = min(best_m + 2e-3, 1.0 - 1e-9)
    x1 = hi - _PHI * (hi - lo)
    x2 = lo + _PHI * (hi - lo)
    f1, _ = _theta_for_bend(spec, x1)
    f2, _ = _theta_for_bend(spec, x2)
    while hi - lo > tol * 1e-2:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _PHI * (hi - lo)
            f1, _ = _theta_for_bend(spec, x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _PHI * (hi - lo)
            f2, _ = _theta_for_bend(spec, x2)
    m_ref = 0.5 * (lo + hi)
    theta_ref, r_ref = _theta_for_bend(spec, m_ref)
    if theta_ref < best_theta:
        best_m, best_theta, best_r = m_ref, theta_ref, r_ref

    mean = mean_of(spec)
    floor = max(mean, 1.0 - mean)
    if best_theta < floor - 1e-9:
        raise RuntimeError("bound search undercut the mean floor; "
                           "moment computation is inconsistent")
    best_theta = max(best_theta, floor)

    r_wit = best_r if math.isfinite(best_r) and best_r > 0 else (
        1e12 if best_r == math.inf else 1e-12)
    witness = EnergyFn.one_bend(best_m, -r_wit, 1.0)
    return BoundResult(best_theta, best_m, best_r, witness, floor)


def mean_residual_life(spec, t: float) -> float:
    """E[Z | Z > t] in closed form; errors at or past the support top."""
    surv = survival(spec, t)
    if surv <= 0.0:
        raise ValueError("no mass above t")
    return tail_mean(spec, t) / surv


# ------------------------------------------------------- convex order

DEFAULT_TEST_FUNCTIONS = (
    ("x^2", lambda x: np.square(x)),
    ("|x-1/2|", lambda x: np.abs(x - 0.5)),
    ("exp", np.exp),
)


@dataclass(frozen=True)
class ConvexOrderReport:
    label: str
    n_checked: int
    n_violations: int
    max_increase: float
    first_violation: int


def convex_order_monitor(run, phis=DEFAULT_TEST_FUNCTIONS,
                         tol: float = 1e-12) -> list[ConvexOrderReport]:
    """Per accepted event, the sum over vertices of phi(value) cannot
    increase for convex phi; report any event where it grows by more
    than ``tol`` (the spatial mean is the sum divided by N)."""
    log = run.log
    mu = run.params.mu
    acc_idx = np.nonzero(log.accepted)[0]
    a = log.pre_u[acc_idx]
    b = log.pre_v[acc_idx]
    a2 = a + mu * (b - a)
    b2 = b + mu * (a - b)
    reports = []
    for label, phi in phis:
        delta = (phi(a2) + phi(b2)) - (phi(a) + phi(b))
        bad = np.nonzero(delta > tol)[0]
        reports.append(ConvexOrderReport(
            label=label,
            n_checked=int(acc_idx.size),
            n_violations=int(bad.size),
            max_increase=float(delta.max()) if delta.size else 0.0,
            first_violation=int(acc_idx[bad[0]]) if bad.size else -1,
        ))
    return reports
