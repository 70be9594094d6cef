"""Triangular meshes of polygonal domains and time grids.

A :class:`Mesh` carries the interior-edge topology needed by residual
estimators: for every interior edge the two adjacent triangles, its length
and unit normal, plus the diameter (longest edge) of every triangle.

Mesh text format (ASCII, ``#`` starts a comment)::

    nodes <N>
    <x> <y> <boundary_flag 0|1>
    ...
    triangles <M>
    <i> <j> <k>
    ...

Node indices are zero-based and triangles are listed counter-clockwise.
Interior edges and diameters are always derived, never read.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np
from scipy.spatial import cKDTree


class MeshError(ValueError):
    """Base class for mesh parse and validation failures."""


class MeshFormatError(MeshError):
    """Malformed header or record in a mesh text stream."""


class MeshValidationError(MeshError):
    """The connectivity violates a mesh invariant."""


class InvertedTriangleError(MeshValidationError):
    pass


class NonConformingMeshError(MeshValidationError):
    pass


class DanglingNodeError(MeshValidationError):
    pass


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def signed_areas(nodes, triangles):
    p0, p1, p2 = (nodes[triangles[:, i]] for i in range(3))
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming, counter-clockwise triangulation with derived topology.

    Build instances with :meth:`from_arrays` (or the generators below); the
    derived fields are filled and the invariants checked there.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    areas: np.ndarray = field(repr=False)
    h_K: np.ndarray = field(repr=False)
    interior_edges: np.ndarray = field(repr=False)
    edge_triangles: np.ndarray = field(repr=False)
    h_E: np.ndarray = field(repr=False)
    edge_normals: np.ndarray = field(repr=False)
    boundary_edges: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, nodes, triangles, boundary, check_conformity=True):
        nodes = np.asarray(nodes, dtype=float)
        triangles = np.asarray(triangles)
        boundary = np.asarray(boundary).astype(bool)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshValidationError("nodes must be an (N, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshValidationError("triangles must be an (M, 3) array")
        if boundary.shape != (len(nodes),):
            raise MeshValidationError("one boundary flag per node is required")
        if not np.issubdtype(triangles.dtype, np.integer):
            if not np.all(triangles == np.round(triangles)):
                raise MeshValidationError("triangle indices must be integers")
        triangles = triangles.astype(np.int64)
        n_nodes = len(nodes)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= n_nodes):
            raise MeshValidationError(
                f"triangle references a node index outside [0, {n_nodes})")
        if np.any((triangles[:, 0] == triangles[:, 1])
                  | (triangles[:, 1] == triangles[:, 2])
                  | (triangles[:, 0] == triangles[:, 2])):
            raise MeshValidationError("triangle with a repeated vertex")

        used = np.zeros(n_nodes, dtype=bool)
        used[triangles.ravel()] = True
        if not used.all():
            raise DanglingNodeError(
                f"node {int(np.flatnonzero(~used)[0])} belongs to no triangle")

        areas = signed_areas(nodes, triangles)
        bad = np.flatnonzero(areas <= 0.0)
        if bad.size:
            raise InvertedTriangleError(
                f"triangle {int(bad[0])} has non-positive signed area {areas[bad[0]]:.3e}")

        # local edges (0,1), (1,2), (2,0); oriented as they appear in the CCW triangle
        a = triangles[:, [0, 1, 2]].ravel()
        b = triangles[:, [1, 2, 0]].ravel()
        owner = np.repeat(np.arange(len(triangles)), 3)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * n_nodes + hi
        order = np.argsort(key, kind="stable")
        key_s = key[order]
        uniq, start, counts = np.unique(key_s, return_index=True, return_counts=True)
        if np.any(counts > 2):
            raise NonConformingMeshError("an edge is shared by more than two triangles")

        two = counts == 2
        first = order[start[two]]
        second = order[start[two] + 1]
        if np.any(a[first] == a[second]):
            raise NonConformingMeshError(
                "two triangles traverse a shared edge in the same direction (folded mesh)")
        # left triangle: the one traversing the edge from the lower to the higher index
        left_is_first = a[first] < b[first]
        left = np.where(left_is_first, owner[first], owner[second])
        right = np.where(left_is_first, owner[second], owner[first])
        i_edges = np.column_stack([lo[first], hi[first]])

        one = order[start[counts == 1]]
        b_edges = np.column_stack([a[one], b[one]])

        if check_conformity and len(b_edges):
            _check_no_hanging_nodes(nodes, b_edges)
        if len(b_edges):
            on_boundary = np.zeros(n_nodes, dtype=bool)
            on_boundary[b_edges.ravel()] = True
            flagged_wrong = on_boundary & ~boundary
            if flagged_wrong.any():
                raise MeshValidationError(
                    f"node {int(np.flatnonzero(flagged_wrong)[0])} lies on the mesh "
                    "boundary but is flagged interior")

        d = nodes[i_edges[:, 1]] - nodes[i_edges[:, 0]]
        h_E = np.hypot(d[:, 0], d[:, 1])
        # unit normal pointing from the left triangle into the right one
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / h_E[:, None]

        p = nodes[triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        h_K = lengths.max(axis=1)

        return cls(
            nodes=_readonly(nodes), triangles=_readonly(triangles),
            boundary=_readonly(boundary), areas=_readonly(areas), h_K=_readonly(h_K),
            interior_edges=_readonly(i_edges),
            edge_triangles=_readonly(np.column_stack([left, right])),
            h_E=_readonly(h_E), edge_normals=_readonly(normals),
            boundary_edges=_readonly(b_edges),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_interior_edges(self) -> int:
        return len(self.interior_edges)

    @property
    def h(self) -> float:
        """Largest triangle diameter."""
        return float(self.h_K.max())

    def same_as(self, other: "Mesh") -> bool:
        return (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.boundary, other.boundary))


def _check_no_hanging_nodes(nodes, b_edges):
    """Boundary edges must not carry another node in their interior."""
    tree = cKDTree(nodes)
    p, q = nodes[b_edges[:, 0]], nodes[b_edges[:, 1]]
    mid = 0.5 * (p + q)
    half = 0.5 * np.hypot(*(q - p).T)
    for e, candidates in enumerate(tree.query_ball_point(mid, half * (1 + 1e-9))):
        for c in candidates:
            if c == b_edges[e, 0] or c == b_edges[e, 1]:
                continue
            d = q[e] - p[e]
            r = nodes[c] - p[e]
            cross = d[0] * r[1] - d[1] * r[0]
            s = (r @ d) / (d @ d)
            if abs(cross) <= 1e-10 * (d @ d) and 0.0 < s < 1.0:
                raise NonConformingMeshError(
                    f"node {c} lies inside edge {tuple(int(v) for v in b_edges[e])}")


def generate_structured(n: int) -> Mesh:
    """n x n grid on the unit square, each cell cut along its (0,0)-(1,1) diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    triangles = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    boundary = ((nodes[:, 0] == 0.0) | (nodes[:, 0] == 1.0)
                | (nodes[:, 1] == 0.0) | (nodes[:, 1] == 1.0))
    return Mesh.from_arrays(nodes, triangles, boundary, check_conformity=False)


def perturb_mesh(mesh: Mesh, amplitude: float, seed: int) -> Mesh:
    """Randomly move interior nodes by up to ``amplitude`` times the local edge length.

    Nodes whose move would invert an adjacent triangle retry with half the
    displacement (up to 30 times, then stay put). Boundary nodes never move.
    """
    if not 0.0 <= amplitude < 0.3:
        raise ValueError("amplitude must lie in [0, 0.3)")
    if amplitude == 0.0:
        return mesh
    rng = np.random.default_rng(seed)
    nodes = np.array(mesh.nodes)
    tri = mesh.triangles

    # shortest incident edge per node
    local_h = np.full(mesh.n_nodes, np.inf)
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    lengths = np.hypot(*(nodes[edges[:, 1]] - nodes[edges[:, 0]]).T)
    np.minimum.at(local_h, edges[:, 0], lengths)
    np.minimum.at(local_h, edges[:, 1], lengths)

    interior = np.flatnonzero(~mesh.boundary)
    shifts = rng.uniform(-1.0, 1.0, size=(mesh.n_nodes, 2)) * (amplitude * local_h)[:, None]

    incident = [[] for _ in range(mesh.n_nodes)]
    for t, verts in enumerate(tri):
        for v in verts:
            incident[v].append(t)

    for v in interior:
        ts = np.asarray(incident[v])
        old = nodes[v].copy()
        step = shifts[v]
        for _ in range(30):
            nodes[v] = old + step
            if np.all(signed_areas(nodes, tri[ts]) > 0.0):
                break
            step = 0.5 * step
        else:
            nodes[v] = old
    return Mesh.from_arrays(nodes, tri, mesh.boundary)


def write_mesh(mesh: Mesh, sink: IO[str]) -> None:
    sink.write(f"nodes {mesh.n_nodes}\n")
    for (x, y), flag in zip(mesh.nodes, mesh.boundary):
        sink.write(f"{float(x)!r} {float(y)!r} {int(flag)}\n")
    sink.write(f"triangles {mesh.n_triangles}\n")
    for i, j, k in mesh.triangles:
        sink.write(f"{i} {j} {k}\n")


def _records(lines: Iterable[str]):
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _header(records, name):
    try:
        lineno, tok = next(records)
    except StopIteration:
        raise MeshFormatError(f"missing '{name}' header") from None
    if len(tok) != 2 or tok[0] != name:
        raise MeshFormatError(f"line {lineno}: expected '{name} <count>', got {' '.join(tok)!r}")
    try:
        count = int(tok[1])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: count {tok[1]!r} is not an integer") from None
    if count < 0:
        raise MeshFormatError(f"line {lineno}: negative count")
    return count


def read_mesh(source) -> Mesh:
    """Parse the mesh text format from a text/byte stream, path-like or string.

    Raises :class:`MeshFormatError` for malformed headers/records and a
    :class:`MeshValidationError` subclass when the connectivity is invalid.
    """
    if hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return read_mesh(fh)
    text = source if isinstance(source, (str, bytes, bytearray)) else source.read()
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MeshFormatError(f"mesh stream is not ASCII: {exc}") from None
    lines = text.splitlines()

    records = _records(lines)
    n_nodes = _header(records, "nodes")
    nodes = np.empty((n_nodes, 2))
    flags = np.empty(n_nodes, dtype=bool)
    for i in range(n_nodes):
        try:
            lineno, tok = next(records)
        except StopIteration:
            raise MeshFormatError(f"expected {n_nodes} node records, got {i}") from None
        if len(tok) != 3 or tok[2] not in ("0", "1"):
            raise MeshFormatError(f"line {lineno}: node record must be '<x> <y> <0|1>'")
        try:
            nodes[i] = float(tok[0]), float(tok[1])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad coordinate") from None
        flags[i] = tok[2] == "1"

    n_tri = _header(records, "triangles")
    tris = np.empty((n_tri, 3), dtype=np.int64)
    for i in range(n_tri):
        try:
            lineno, tok = next(records)
        except StopIteration:
            raise MeshFormatError(f"expected {n_tri} triangle records, got {i}") from None
        if len(tok) != 3:
            raise MeshFormatError(f"line {lineno}: triangle record must be '<i> <j> <k>'")
        try:
            tris[i] = [int(t) for t in tok]
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad node index") from None
    extra = next(records, None)
    if extra is not None:
        raise MeshFormatError(f"line {extra[0]}: unexpected trailing content")
    return Mesh.from_arrays(nodes, tris, flags)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Instants 0 = t_0 < t_1 < ... < t_N = T; steps are derived from them."""

    instants: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.instants, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a time grid needs at least two instants")
        if t[0] != 0.0:
            raise ValueError("time grids start at t_0 = 0")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("time instants must be strictly increasing")
        object.__setattr__(self, "instants", _readonly(t))

    @classmethod
    def uniform(cls, T: float, N: int) -> "TimeGrid":
        if N < 1:
            raise ValueError("N must be at least 1")
        t = np.arange(N + 1) * (T / N)
        t[-1] = T
        return cls(t)

    @property
    def N(self) -> int:
        return len(self.instants) - 1

    @property
    def T(self) -> float:
        return float(self.instants[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.instants)

    @property
    def tau(self) -> float:
        """Largest step."""
        return float(self.steps.max())

    def tau_half(self, n: int) -> float:
        """(tau_n + tau_{n-1}) / 2 for 1 <= n <= N-1."""
        t = self.instants
        return 0.5 * (t[n + 1] - t[n - 1])

    def is_uniform(self, rtol: float = 1e-10) -> bool:
        s = self.steps
        return bool(np.all(np.abs(s - s[0]) <= rtol * s[0]))


def generate_alternating_timegrid(tau_star: float, ratio: float, T: float) -> TimeGrid:
    """Steps ratio*tau_star (even n) and tau_star (odd n); the last step is cut to hit T."""
    if not tau_star > 0.0:
        raise ValueError("tau_star must be positive")
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    if tau_star >= T:
        raise ValueError(f"degenerate grid: tau_star={tau_star} >= T={T}")
    block = (1.0 + ratio) * tau_star
    # instants from closed form, so long grids do not accumulate rounding
    m = np.arange(int(np.ceil(2 * T / block)) + 3)
    t = (m // 2) * block + (m % 2) * (ratio * tau_star)
    # a remainder shorter than this is absorbed into the previous step
    slack = 1e-6 * ratio * tau_star
    inside = t[t < T - slack]
    t = np.append(inside, T)
    return TimeGrid(t)


def alternating_timegrid_with_steps(N: int, ratio: float, T: float = 1.0) -> TimeGrid:
    """Alternating grid made of N/2 whole (ratio*tau_star, tau_star) blocks ending at T."""
    if N < 2 or N % 2:
        raise ValueError("N must be an even integer >= 2")
    tau_star = T / ((N // 2) * (1.0 + ratio))
    grid = generate_alternating_timegrid(tau_star, ratio, T)
    if grid.N != N:
        raise RuntimeError(f"alternating grid produced {grid.N} steps instead of {N}")
    return grid
