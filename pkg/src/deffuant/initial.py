"""Initial opinion laws: specs, descriptors, thresholds, and sampling.

A distribution spec is a small frozen dataclass describing the common
law of the initial opinions.  From a spec we derive, in closed form,
the support descriptor (endpoints, mean, and the maximal open zero-mass
interval around the mean), the critical confidence threshold

    theta_c = max(mean - lower, upper - mean, gap width),

and the regime classification at a given threshold.  At the critical
point the classification follows the atom rule: a gap-dominated
threshold gives consensus when both gap endpoints carry atoms, no
consensus when at least one endpoint is atom-free, and is reported as
unresolved otherwise.  Unbounded laws whose expectation exists in the
strong or weak sense are subcritical at every finite threshold, so
``theoretical_theta_c`` reports ``inf`` for them.

Sampling is a pure function of ``(seed, stream)``.  Everything uses
inverse-transform or numpy's generator so replicas are reproducible.

The module also exposes exact integral primitives (cdf, point mass,
tail mean) per variant; the energy-method bounds are computed from
these without any numeric quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import special

from . import _rng


class ConsensusRegime(Enum):
    SUBCRITICAL = "subcritical"
    SUPERCRITICAL = "supercritical"
    CRITICAL_CONSENSUS = "critical_consensus"
    CRITICAL_NO_CONSENSUS = "critical_no_consensus"
    CRITICAL_UNRESOLVED = "critical_unresolved"


# ===================================================================
# specs
# ===================================================================

@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def validate(self) -> None:
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("uniform endpoints must be finite")
        if not self.lower < self.upper:
            raise ValueError("uniform needs lower < upper")


@dataclass(frozen=True)
class Beta:
    alpha: float
    beta: float

    def validate(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("beta parameters must be positive")


@dataclass(frozen=True)
class Discrete:
    atoms: tuple[float, ...]
    weights: tuple[float, ...]

    def validate(self) -> None:
        if len(self.atoms) == 0:
            raise ValueError("discrete law needs at least one atom")
        if len(self.atoms) != len(self.weights):
            raise ValueError("atoms and weights must have equal length")
        if any(w <= 0 for w in self.weights):
            raise ValueError("atom weights must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("atom weights must sum to 1")
        if list(self.atoms) != sorted(set(self.atoms)):
            raise ValueError("atoms must be strictly increasing")


@dataclass(frozen=True)
class UnionUniform:
    """Uniform on a disjoint union of intervals, mass proportional to length."""

    intervals: tuple[tuple[float, float], ...]

    def validate(self) -> None:
        if len(self.intervals) == 0:
            raise ValueError("union law needs at least one interval")
        prev_hi = -math.inf
        for lo, hi in self.intervals:
            if not lo < hi:
                raise ValueError(f"interval ({lo}, {hi}) has nonpositive length")
            if lo <= prev_hi:
                raise ValueError("intervals must be disjoint and ascending")
            prev_hi = hi


@dataclass(frozen=True)
class Pareto:
    """Power-law tail on [scale, inf); mean is finite iff shape > 1."""

    shape: float
    scale: float = 1.0

    def validate(self) -> None:
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("pareto shape and scale must be positive")

    def median(self) -> float:
        return self.scale * 2.0 ** (1.0 / self.shape)


@dataclass(frozen=True)
class Affine:
    """mul * X + add for X distributed by ``base``."""

    base: "DistributionSpec"
    mul: float = 1.0
    add: float = 0.0

    def validate(self) -> None:
        if self.mul == 0 or not math.isfinite(self.mul) or not math.isfinite(self.add):
            raise ValueError("affine transform needs finite mul != 0 and add")
        self.base.validate()


DistributionSpec = Union[Uniform, Beta, Discrete, UnionUniform, Pareto, Affine]


def centered_pareto(shape: float, scale: float = 1.0) -> Affine:
    """Pareto tail shifted so the median sits at zero (two-signed values)."""
    inner = Pareto(shape, scale)
    inner.validate()
    return Affine(inner, 1.0, -inner.median())


# ===================================================================
# descriptors and thresholds
# ===================================================================

@dataclass(frozen=True)
class SupportDescriptor:
    """Closed-form facts about a law that the threshold theory consumes.

    ``gap`` is the maximal open interval around the mean carrying zero
    mass (None when the mean sits inside the support), and the atom
    flags say whether the gap endpoints carry point mass.
    """

    lower: float
    upper: float
    mean: float
    gap: tuple[float, float] | None
    atom_at_gap_lower: bool
    atom_at_gap_upper: bool

    @property
    def gap_width(self) -> float:
        return 0.0 if self.gap is None else self.gap[1] - self.gap[0]

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)


def describe(spec: DistributionSpec) -> SupportDescriptor:
    spec.validate()
    if isinstance(spec, Uniform):
        return SupportDescriptor(spec.lower, spec.upper,
                                 0.5 * (spec.lower + spec.upper), None, False, False)
    if isinstance(spec, Beta):
        return SupportDescriptor(0.0, 1.0, spec.alpha / (spec.alpha + spec.beta),
                                 None, False, False)
    if isinstance(spec, Discrete):
        atoms = spec.atoms
        # exactly rounded sum, so the atom test below is order-independent
        mean = math.fsum(a * w for a, w in zip(spec.atoms, spec.weights))
        if mean in atoms:
            return SupportDescriptor(atoms[0], atoms[-1], mean, None, False, False)
        below = [x for x in atoms if x < mean]
        above = [x for x in atoms if x > mean]
        if not below or not above:
            # single atom, or mean outside by rounding; no zero-mass gap
            return SupportDescriptor(atoms[0], atoms[-1], mean, None, False, False)
        return SupportDescriptor(atoms[0], atoms[-1], mean,
                                 (max(below), min(above)), True, True)
    if isinstance(spec, UnionUniform):
        iv = spec.intervals
        lengths = [hi - lo for lo, hi in iv]
        total = math.fsum(lengths)
        mean = math.fsum(0.5 * (lo + hi) * w
                         for (lo, hi), w in zip(iv, lengths)) / total
        lower, upper = iv[0][0], iv[-1][1]
        for lo, hi in iv:
            if lo <= mean <= hi:
                return SupportDescriptor(lower, upper, mean, None, False, False)
        for (lo0, hi0), (lo1, _) in zip(iv, iv[1:]):
            if hi0 < mean < lo1:
                return SupportDescriptor(lower, upper, mean, (hi0, lo1), False, False)
        raise AssertionError("mean not located; interval validation is broken")
    if isinstance(spec, Pareto):
        mean = spec.shape * spec.scale / (spec.shape - 1.0) if spec.shape > 1 \
            else math.inf
        return SupportDescriptor(spec.scale, math.inf, mean, None, False, False)
    if isinstance(spec, Affine):
        d = describe(spec.base)
        lo = spec.mul * d.lower + spec.add
        hi = spec.mul * d.upper + spec.add
        mean = spec.mul * d.mean + spec.add
        if spec.mul > 0:
            gap = None if d.gap is None else (spec.mul * d.gap[0] + spec.add,
                                              spec.mul * d.gap[1] + spec.add)
            return SupportDescriptor(lo, hi, mean, gap,
                                     d.atom_at_gap_lower, d.atom_at_gap_upper)
        gap = None if d.gap is None else (spec.mul * d.gap[1] + spec.add,
                                          spec.mul * d.gap[0] + spec.add)
        return SupportDescriptor(min(lo, hi), max(lo, hi), mean, gap,
                                 d.atom_at_gap_upper, d.atom_at_gap_lower)
    raise TypeError(f"not a distribution spec: {spec!r}")


def _as_descriptor(obj) -> SupportDescriptor:
    return obj if isinstance(obj, SupportDescriptor) else describe(obj)


def theoretical_theta_c(obj: DistributionSpec | SupportDescriptor) -> float:
    """Critical threshold; ``inf`` means subcritical at every threshold."""
    d = _as_descriptor(obj)
    if not d.bounded:
        return math.inf
    return max(d.mean - d.lower, d.upper - d.mean, d.gap_width)


def criticality_class(obj: DistributionSpec | SupportDescriptor,
                      theta: float) -> ConsensusRegime:
    """Regime of the model at confidence threshold ``theta``."""
    if not theta > 0:
        raise ValueError("threshold must be positive")
    d = _as_descriptor(obj)
    if not d.bounded:
        return ConsensusRegime.SUBCRITICAL
    tc = theoretical_theta_c(d)
    if theta < tc:
        return ConsensusRegime.SUBCRITICAL
    if theta > tc:
        return ConsensusRegime.SUPERCRITICAL
    spread = max(d.mean - d.lower, d.upper - d.mean)
    if d.gap_width > spread:
        if d.atom_at_gap_lower and d.atom_at_gap_upper:
            return ConsensusRegime.CRITICAL_CONSENSUS
        return ConsensusRegime.CRITICAL_NO_CONSENSUS
    return ConsensusRegime.CRITICAL_UNRESOLVED


# ===================================================================
# sampling
# ===================================================================

def _sample(spec: DistributionSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    if isinstance(spec, Uniform):
        return spec.lower + (spec.upper - spec.lower) * gen.random(n)
    if isinstance(spec, Beta):
        return gen.beta(spec.alpha, spec.beta, n)
    if isinstance(spec, Discrete):
        idx = gen.choice(len(spec.atoms), size=n, p=np.asarray(spec.weights))
        return np.asarray(spec.atoms, dtype=np.float64)[idx]
    if isinstance(spec, UnionUniform):
        lengths = np.array([hi - lo for lo, hi in spec.intervals])
        cuts = np.cumsum(lengths)
        x = gen.random(n) * cuts[-1]
        j = np.searchsorted(cuts, x, side="right")
        j = np.minimum(j, len(lengths) - 1)
        starts = np.array([lo for lo, _ in spec.intervals])
        offsets = x - (cuts[j] - lengths[j])
        return starts[j] + offsets
    if isinstance(spec, Pareto):
        u = gen.random(n)
        return spec.scale * (1.0 - u) ** (-1.0 / spec.shape)
    if isinstance(spec, Affine):
        return spec.mul * _sample(spec.base, n, gen) + spec.add
    raise TypeError(f"not a distribution spec: {spec!r}")


def sample_iid(spec: DistributionSpec, where, seed: int, stream: int = 0) -> np.ndarray:
    """i.i.d. field over a lattice graph (or a plain count of sites)."""
    spec.validate()
    n = where if isinstance(where, int) else where.n_vertices
    return _sample(spec, n, _rng.generator(seed, _rng.FIELD, stream))


# ===================================================================
# block construction (dependent field on the ring)
# ===================================================================

BLOCK_LEN = 9
BLOCK_CENTER_VALUE = 0.5


@dataclass
class BlockField:
    """A ring field of length-9 blocks: 4 flanks, center 1/2, 4 flanks.

    Each block's flanks are all 0 or all 1 with equal probability; the
    whole pattern is shifted by a uniform offset in {-4, .., 4}.
    ``boundary_positions[k]`` is the ring position of the edge between
    block k and block k+1 and ``boundary_differs[k]`` says whether
    those two blocks carry opposite flank values.
    """

    values: np.ndarray
    offset: int
    types: np.ndarray
    centers: np.ndarray
    boundary_positions: np.ndarray
    boundary_differs: np.ndarray


def block_marginal() -> Discrete:
    """Single-site law of the block construction."""
    return Discrete((0.0, BLOCK_CENTER_VALUE, 1.0), (4 / 9, 1 / 9, 4 / 9))


def sample_blocks(graph, seed: int, stream: int = 0) -> BlockField:
    """Sample the dependent block field on a 1-d torus."""
    if graph.spec.dimension != 1 or not graph.spec.periodic:
        raise ValueError("block fields are defined on the 1-d torus")
    n = graph.n_vertices
    if n % BLOCK_LEN != 0:
        raise ValueError(f"ring length must be a multiple of {BLOCK_LEN}")
    n_blocks = n // BLOCK_LEN
    gen = _rng.generator(seed, _rng.FIELD, stream)
    offset = int(gen.integers(-(BLOCK_LEN // 2), BLOCK_LEN // 2 + 1))
    types = gen.integers(0, 2, n_blocks).astype(np.float64)
    centers = (offset + BLOCK_LEN * np.arange(n_blocks)) % n
    values = np.repeat(types, BLOCK_LEN)
    values = np.roll(values, offset - BLOCK_LEN // 2)
    values[centers] = BLOCK_CENTER_VALUE
    # edge between the last site of block k and the first site of k+1
    boundary_positions = (centers + BLOCK_LEN // 2) % n
    boundary_differs = types != np.roll(types, -1)
    return BlockField(values, offset, types, centers.astype(np.int64),
                      boundary_positions.astype(np.int64), boundary_differs)


# ===================================================================
# exact integral primitives
# ===================================================================

def mean_of(spec: DistributionSpec) -> float:
    return describe(spec).mean


def cdf(spec: DistributionSpec, t: float) -> float:
    """P(X <= t), exact per variant."""
    if isinstance(spec, Uniform):
        return float(np.clip((t - spec.lower) / (spec.upper - spec.lower), 0.0, 1.0))
    if isinstance(spec, Beta):
        return float(special.betainc(spec.alpha, spec.beta, np.clip(t, 0.0, 1.0)))
    if isinstance(spec, Discrete):
        return float(sum(w for x, w in zip(spec.atoms, spec.weights) if x <= t))
    if isinstance(spec, UnionUniform):
        total = sum(hi - lo for lo, hi in spec.intervals)
        covered = sum(max(0.0, min(t, hi) - lo) for lo, hi in spec.intervals)
        return covered / total
    if isinstance(spec, Pareto):
        if t < spec.scale:
            return 0.0
        return 1.0 - (spec.scale / t) ** spec.shape
    if isinstance(spec, Affine):
        s = (t - spec.add) / spec.mul
        if spec.mul > 0:
            return cdf(spec.base, s)
        return 1.0 - cdf(spec.base, s) + point_mass(spec.base, s)
    raise TypeError(f"not a distribution spec: {spec!r}")


def point_mass(spec: DistributionSpec, x: float) -> float:
    """P(X == x)."""
    if isinstance(spec, Discrete):
        for atom, w in zip(spec.atoms, spec.weights):
            if atom == x:
                return w
        return 0.0
    if isinstance(spec, Affine):
        return point_mass(spec.base, (x - spec.add) / spec.mul)
    return 0.0


def tail_mean(spec: DistributionSpec, t: float) -> float:
    """E[X 1{X > t}], exact per variant (finite-mean laws)."""
    if isinstance(spec, Uniform):
        a, b = spec.lower, spec.upper
        if t <= a:
            return 0.5 * (a + b)
        if t >= b:
            return 0.0
        return (b * b - t * t) / (2.0 * (b - a))
    if isinstance(spec, Beta):
        mean = spec.alpha / (spec.alpha + spec.beta)
        x = float(np.clip(t, 0.0, 1.0))
        # x f(x; a, b) integrates like the (a+1, b) density scaled by the mean
        return mean * (1.0 - float(special.betainc(spec.alpha + 1.0, spec.beta, x)))
    if isinstance(spec, Discrete):
        return float(sum(w * x for x, w in zip(spec.atoms, spec.weights) if x > t))
    if isinstance(spec, UnionUniform):
        total = sum(hi - lo for lo, hi in spec.intervals)
        acc = 0.0
        for lo, hi in spec.intervals:
            lo_eff = max(lo, min(t, hi))
            acc += 0.5 * (hi * hi - lo_eff * lo_eff)
        return acc / total
    if isinstance(spec, Pareto):
        if spec.shape <= 1:
            return math.inf
        t_eff = max(t, spec.scale)
        return (spec.shape / (spec.shape - 1.0)) * t_eff \
            * (spec.scale / t_eff) ** spec.shape
    if isinstance(spec, Affine):
        s = (t - spec.add) / spec.mul
        base = spec.base
        if spec.mul > 0:
            return spec.mul * tail_mean(base, s) + spec.add * survival(base, s)
        below_mass = cdf(base, s) - point_mass(base, s)
        below_mean = mean_of(base) - tail_mean(base, s) - s * point_mass(base, s)
        return spec.mul * below_mean + spec.add * below_mass
    raise TypeError(f"not a distribution spec: {spec!r}")


def survival(spec: DistributionSpec, t: float) -> float:
    return 1.0 - cdf(spec, t)


def plus_part_mean(spec: DistributionSpec, m: float) -> float:
    """E[(X - m)^+]."""
    return tail_mean(spec, m) - m * survival(spec, m)


def minus_part_mean(spec: DistributionSpec, m: float) -> float:
    """E[(m - X)^+]."""
    return m * cdf(spec, m) - (mean_of(spec) - tail_mean(spec, m))


def mean_abs_deviation(spec: DistributionSpec, center: float) -> float:
    """E|X - center|."""
    return plus_part_mean(spec, center) + minus_part_mean(spec, center)
