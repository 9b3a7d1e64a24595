"""Splittable counter-based random streams.

Every random draw in this package is addressed by a triple
``(master seed, stream, draw index)``.  A stream is derived from the
master seed plus a purpose tag and a replica index, so parallel
replicas consume disjoint streams and results never depend on
scheduling order.  Draw ``k`` of a stream is the ``k``-th output of a
SplitMix64 sequence, i.e. a pure function of the triple; the numba
kernels in :mod:`deffuant._kernels` evaluate the same function with
uint64 arithmetic, and :func:`test agreement <uniform_draw>` is pinned
by the test suite.

Distribution sampling (beta, Pareto tails, shuffles) goes through a
numpy ``Generator`` seeded from the same derivation, see
:func:`generator`.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_PURPOSE_SALT = 0xD1B54A32D192ED03
_STREAM_SALT = 0x8BB84B93962EACC9
_INV_2_53 = 1.0 / 9007199254740992.0

# Purpose tags.  Keeping them distinct guarantees e.g. that running the
# percolation sampler does not shift the dynamics of the run.
FIELD = 1
DYNAMICS = 2
PERCOLATION = 3
AUX = 4


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return z ^ (z >> 31)


def stream_seed(master_seed: int, purpose: int, stream: int = 0) -> int:
    """Derive the uint64 state of one stream.

    Args:
        master_seed: experiment-level seed, any Python int.
        purpose: one of FIELD / DYNAMICS / PERCOLATION / AUX.
        stream: replica index (or other substream index), >= 0.

    Returns:
        A 64-bit integer usable as the base of a SplitMix64 sequence.
    """
    z = mix64(master_seed & _MASK)
    z = mix64(z ^ mix64((purpose + 1) * _PURPOSE_SALT))
    z = mix64(z ^ mix64((stream + 1) * _STREAM_SALT))
    return z


def raw_draw(seed: int, index: int) -> int:
    """Output ``index`` (0-based) of the SplitMix64 stream ``seed``."""
    return mix64((seed + ((index + 1) * _GOLDEN)) & _MASK)


def uniform_draw(seed: int, index: int) -> float:
    """Uniform [0, 1) double from draw ``index`` of stream ``seed``."""
    return float(raw_draw(seed, index) >> 11) * _INV_2_53


def exponential_draw(seed: int, index: int) -> float:
    """Exp(1) variate from draw ``index`` of stream ``seed``.

    Uses -log1p(-u) so the result is finite and nonnegative for every
    representable u in [0, 1).
    """
    return -float(np.log1p(-uniform_draw(seed, index)))


def generator(master_seed: int, purpose: int, stream: int = 0) -> np.random.Generator:
    """numpy Generator for distribution-level sampling on one stream."""
    return np.random.default_rng(stream_seed(master_seed, purpose, stream))
