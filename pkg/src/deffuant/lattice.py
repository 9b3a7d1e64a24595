"""Hypercubic lattices, bond percolation, and cluster labeling.

Finite boxes ``{0, .., s_1 - 1} x .. x {0, .., s_d - 1}`` with either
periodic (torus) or free boundary.  Vertices are indexed row-major over
the axes (last axis fastest); edges join nearest neighbors along one
axis and are stored as ``(u, v)`` pairs with ``u < v``, sorted
lexicographically, so edge ids are stable across runs and platforms.

Bond percolation keeps each edge open independently with probability
``p``; samples are pure functions of ``(seed, stream)``.  Cluster
labeling runs union-find over the open edges.  On a torus, the
"spanning" flag of the largest cluster means it wraps around some
axis, detected by lifting the cluster to the universal cover; with
free boundary it means the cluster touches two opposite faces.

A compact plain-text serialization (header plus hex bitmap) round-trips
both lattices and percolation samples exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng
from ._kernels import cluster_wraps, union_find_labels

_FMT = "%.17g"


@dataclass(frozen=True)
class LatticeSpec:
    """Shape of a finite box: side lengths per axis plus boundary kind."""

    sides: tuple[int, ...]
    periodic: bool = True

    @property
    def dimension(self) -> int:
        return len(self.sides)

    def validate(self) -> None:
        if len(self.sides) < 1:
            raise ValueError("lattice needs at least one axis")
        for s in self.sides:
            if s < 1:
                raise ValueError(f"side lengths must be positive, got {s}")
            if self.periodic and s < 3:
                # side 1 would be a self-loop, side 2 a doubled edge
                raise ValueError(f"periodic boundary needs side >= 3, got {s}")


def ring(n_sites: int) -> "LatticeGraph":
    """Cycle of ``n_sites`` vertices; shorthand for the 1-d torus."""
    return build_lattice(LatticeSpec((n_sites,), periodic=True))


class LatticeGraph:
    """Immutable lattice with a fixed, sorted edge list.

    Attributes:
        spec: the defining LatticeSpec.
        n_vertices: number of vertices.
        edges: (m, 2) int64, each row (u, v) with u < v, lex-sorted.
        edge_axis: (m,) int8, the axis each edge runs along.
        edge_wraps: (m,) bool, True for torus seam edges.
    """

    def __init__(self, spec: LatticeSpec, edges: np.ndarray,
                 edge_axis: np.ndarray, edge_wraps: np.ndarray):
        self.spec = spec
        self.n_vertices = int(np.prod(spec.sides))
        self.edges = edges
        self.edge_axis = edge_axis
        self.edge_wraps = edge_wraps
        self._coords: np.ndarray | None = None

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def edge_u(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def edge_v(self) -> np.ndarray:
        return self.edges[:, 1]

    def vertex_coords(self) -> np.ndarray:
        """(n, d) int64 array of coordinates, row-major order."""
        if self._coords is None:
            unraveled = np.unravel_index(np.arange(self.n_vertices), self.spec.sides)
            self._coords = np.stack(unraveled, axis=1).astype(np.int64)
        return self._coords

    def vertex_index(self, coords) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.spec.sides))

    def ring_positions(self) -> np.ndarray:
        """Cyclic position of each edge on a 1-d torus.

        Edge (u, u+1) sits at position u, the seam edge (0, n-1) at
        position n-1, so consecutive positions are adjacent on the ring.
        """
        if self.spec.dimension != 1 or not self.spec.periodic:
            raise ValueError("ring positions are defined for the 1-d torus only")
        return np.where(self.edge_wraps, self.edges[:, 1], self.edges[:, 0])

    def open_adjacency(self, open_mask: np.ndarray):
        """CSR half-edge adjacency over open edges, with lift steps.

        Returns (indptr, nbr_vertex, nbr_axis, nbr_step); the step is
        the +-1 displacement along the axis from source to neighbor in
        the universal cover, so seam edges carry the sign that makes
        winding numbers visible to :func:`cluster_wraps`.
        """
        sel = np.flatnonzero(open_mask)
        u = self.edges[sel, 0]
        v = self.edges[sel, 1]
        ax = self.edge_axis[sel]
        wrap = self.edge_wraps[sel]
        step_uv = np.where(wrap, -1, 1).astype(np.int64)
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        axes = np.concatenate([ax, ax])
        steps = np.concatenate([step_uv, -step_uv])
        order = np.argsort(src, kind="stable")
        counts = np.bincount(src, minlength=self.n_vertices)
        indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return indptr, dst[order], axes[order].astype(np.int64), steps[order]


def build_lattice(spec: LatticeSpec) -> LatticeGraph:
    """Construct the lattice graph for ``spec``."""
    spec.validate()
    idx = np.arange(np.prod(spec.sides), dtype=np.int64).reshape(spec.sides)
    lo_parts, hi_parts, ax_parts, wrap_parts = [], [], [], []

    def add(a: np.ndarray, b: np.ndarray, axis: int, wraps: bool) -> None:
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        lo_parts.append(lo)
        hi_parts.append(hi)
        ax_parts.append(np.full(lo.shape[0], axis, dtype=np.int8))
        wrap_parts.append(np.full(lo.shape[0], wraps, dtype=np.bool_))

    for axis, side in enumerate(spec.sides):
        rolled = np.moveaxis(idx, axis, 0)
        if side >= 2:
            add(rolled[:-1], rolled[1:], axis, False)
        if spec.periodic:
            add(rolled[-1], rolled[0], axis, True)

    lo = np.concatenate(lo_parts) if lo_parts else np.empty(0, dtype=np.int64)
    hi = np.concatenate(hi_parts) if hi_parts else np.empty(0, dtype=np.int64)
    order = np.lexsort((hi, lo))
    edges = np.stack([lo[order], hi[order]], axis=1)
    if edges.shape[0] > 1:
        dup = (np.diff(edges[:, 0]) == 0) & (np.diff(edges[:, 1]) == 0)
        if dup.any():
            raise AssertionError("duplicate edges; spec validation is broken")
    return LatticeGraph(spec, edges,
                        np.concatenate(ax_parts)[order] if ax_parts else np.empty(0, np.int8),
                        np.concatenate(wrap_parts)[order] if wrap_parts else np.empty(0, np.bool_))


def box_volume(dim: int, radius: int) -> int:
    """Vertex count of the centered box of the given radius in Z^dim."""
    if dim < 1 or radius < 0:
        raise ValueError("need dim >= 1 and radius >= 0")
    return (2 * radius + 1) ** dim


def edge_boundary_size(dim: int, radius: int) -> int:
    """Number of edges of Z^dim with exactly one endpoint in the box.

    The box has two faces per axis, each face a (dim-1)-dimensional
    slab of (2 radius + 1)^(dim-1) vertices with one outgoing edge.
    """
    if dim < 1 or radius < 0:
        raise ValueError("need dim >= 1 and radius >= 0")
    return 2 * dim * (2 * radius + 1) ** (dim - 1)


# ===================================================================
# percolation
# ===================================================================

@dataclass
class PercolationSample:
    """Open-edge configuration of one percolation draw."""

    graph: LatticeGraph
    p: float
    seed: int
    stream: int
    open_mask: np.ndarray

    @property
    def n_open(self) -> int:
        return int(self.open_mask.sum())

    def open_edges(self) -> np.ndarray:
        return np.flatnonzero(self.open_mask).astype(np.int64)


def percolate(graph: LatticeGraph, p: float, seed: int, stream: int = 0) -> PercolationSample:
    """i.i.d. bond percolation; a pure function of (seed, stream)."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"retention probability must lie in (0, 1], got {p}")
    uni = _rng.generator(seed, _rng.PERCOLATION, stream).random(graph.n_edges)
    return PercolationSample(graph, p, seed, stream, uni < p)


def full_sample(graph: LatticeGraph) -> PercolationSample:
    """The deterministic all-open sample (p = 1 shortcut)."""
    return PercolationSample(graph, 1.0, 0, 0, np.ones(graph.n_edges, dtype=np.bool_))


def couple_percolation(graph: LatticeGraph, p: float, seed: int, pivot_edge: int,
                       stream: int = 0) -> tuple[PercolationSample, PercolationSample]:
    """Two coupled percolation draws differing at most at ``pivot_edge``.

    Both components are marginally percolation at ``p``; every edge
    except the pivot is shared.  The pivot is open in the first copy on
    ``U < p`` and in the second on ``U > 1 - p``, so the probability of
    "closed in the first, open in the second" is exactly min(p, 1-p).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"coupling needs p strictly inside (0, 1), got {p}")
    if not 0 <= pivot_edge < graph.n_edges:
        raise ValueError(f"pivot edge {pivot_edge} out of range")
    uni = _rng.generator(seed, _rng.PERCOLATION, stream).random(graph.n_edges)
    first = uni < p
    second = first.copy()
    second[pivot_edge] = uni[pivot_edge] > 1.0 - p
    return (PercolationSample(graph, p, seed, stream, first),
            PercolationSample(graph, p, seed, stream, second))


# ===================================================================
# cluster labeling
# ===================================================================

@dataclass
class ClusterLabeling:
    """Connected components of the open subgraph.

    Attributes:
        labels: (n,) int64 dense cluster ids (sorted by root vertex).
        sizes: (k,) int64 vertex counts per cluster.
        largest: label of the largest cluster (lowest label on ties).
        spanning: whether the largest cluster wraps (torus) or touches
            two opposite faces along some axis (free boundary).
    """

    labels: np.ndarray
    sizes: np.ndarray
    largest: int
    spanning: bool

    @property
    def n_clusters(self) -> int:
        return self.sizes.shape[0]

    def largest_members(self) -> np.ndarray:
        return self.labels == self.largest


def label_clusters(sample: PercolationSample) -> ClusterLabeling:
    """Label open clusters and analyze the largest one."""
    g = sample.graph
    roots = union_find_labels(g.n_vertices, g.edge_u, g.edge_v, sample.open_mask)
    _, labels = np.unique(roots, return_inverse=True)
    sizes = np.bincount(labels)
    largest = int(np.argmax(sizes))
    member = labels == largest
    if g.spec.periodic:
        indptr, nbr_vertex, nbr_axis, nbr_step = g.open_adjacency(sample.open_mask)
        spanning = bool(cluster_wraps(member, indptr, nbr_vertex, nbr_axis,
                                      nbr_step, g.spec.dimension))
    else:
        coords = g.vertex_coords()[member]
        spanning = any(
            coords[:, a].min() == 0 and coords[:, a].max() == side - 1
            for a, side in enumerate(g.spec.sides) if side > 1
        ) if coords.shape[0] else False
    return ClusterLabeling(labels.astype(np.int64), sizes.astype(np.int64),
                           largest, spanning)


# ===================================================================
# plain-text serialization
# ===================================================================

def _header_lines(spec: LatticeSpec) -> list[str]:
    return [
        "sides=" + ",".join(str(s) for s in spec.sides),
        "periodic=" + ("1" if spec.periodic else "0"),
    ]


def save_lattice(graph: LatticeGraph, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("deffuant-lattice v1\n")
        for line in _header_lines(graph.spec):
            fh.write(line + "\n")


def save_percolation(sample: PercolationSample, path: str) -> None:
    bits = np.packbits(sample.open_mask.astype(np.uint8), bitorder="little")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("deffuant-percolation v1\n")
        for line in _header_lines(sample.graph.spec):
            fh.write(line + "\n")
        fh.write("p=" + _FMT % sample.p + "\n")
        fh.write(f"seed={sample.seed}\n")
        fh.write(f"stream={sample.stream}\n")
        fh.write(f"nedges={sample.graph.n_edges}\n")
        fh.write("open=" + bits.tobytes().hex() + "\n")


def _parse_header(lines: list[str], expect: str) -> dict[str, str]:
    if not lines or lines[0].strip() != expect:
        raise ValueError(f"expected a '{expect}' file")
    fields = {}
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        fields[key] = value
    return fields


def load_lattice(path: str) -> LatticeGraph:
    with open(path, encoding="ascii") as fh:
        fields = _parse_header(fh.read().splitlines(), "deffuant-lattice v1")
    spec = LatticeSpec(tuple(int(s) for s in fields["sides"].split(",")),
                       fields["periodic"] == "1")
    return build_lattice(spec)


def load_percolation(path: str) -> PercolationSample:
    with open(path, encoding="ascii") as fh:
        fields = _parse_header(fh.read().splitlines(), "deffuant-percolation v1")
    spec = LatticeSpec(tuple(int(s) for s in fields["sides"].split(",")),
                       fields["periodic"] == "1")
    graph = build_lattice(spec)
    n_edges = int(fields["nedges"])
    if n_edges != graph.n_edges:
        raise ValueError("edge count does not match the lattice header")
    packed = np.frombuffer(bytes.fromhex(fields["open"]), dtype=np.uint8)
    mask = np.unpackbits(packed, count=n_edges, bitorder="little").astype(np.bool_)
    return PercolationSample(graph, float(fields["p"]), int(fields["seed"]),
                             int(fields["stream"]), mask)
