"""Simplicial triangulations of 2D polygonal domains.

Local edge ``i`` of a triangle is the edge opposite its vertex ``i`` and is
traversed counterclockwise, so the local outward normal is the clockwise
rotation of the traversal direction.  Every global edge stores the vertex
order used by the lowest-index adjacent triangle; its unit normal therefore
points from the lower to the higher triangle index (outward on the boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MeshError

_LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Immutable triangle mesh with edge connectivity and orientation data.

    Use :meth:`from_arrays` to build one; it derives the edge tables and
    validates all invariants.
    """

    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counterclockwise
    edges: np.ndarray  # (ne, 2), globally oriented vertex pairs
    triangle_to_edges: np.ndarray  # (nt, 3), local edge i is opposite vertex i
    edge_signs: np.ndarray  # (nt, 3), +1 if local outward normal == global normal
    edge_to_triangles: np.ndarray  # (ne, 2), second entry -1 on the boundary
    boundary_edge_flags: np.ndarray  # (ne,) bool
    h_per_element: np.ndarray = field(repr=False)  # (nt,)
    areas: np.ndarray = field(repr=False)  # (nt,)

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "Triangulation":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must have shape (N, 2), got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError(f"triangles must have shape (M, 3), got {triangles.shape}")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle vertex index out of range")

        p = vertices[triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        bad = np.flatnonzero(areas <= 0.0)
        if bad.size:
            raise MeshError(
                f"triangle {bad[0]} has non-positive signed area {areas[bad[0]]:.3e}"
            )

        nt = len(triangles)
        edge_index: dict[tuple[int, int], int] = {}
        edges: list[tuple[int, int]] = []
        owners: list[list[int]] = []
        t2e = np.empty((nt, 3), dtype=np.int64)
        signs = np.empty((nt, 3), dtype=np.int64)
        for t in range(nt):
            tri = triangles[t]
            for i, (a, b) in enumerate(_LOCAL_EDGES):
                va, vb = int(tri[a]), int(tri[b])
                key = (va, vb) if va < vb else (vb, va)
                e = edge_index.get(key)
                if e is None:
                    e = len(edges)
                    edge_index[key] = e
                    edges.append((va, vb))
                    owners.append([t])
                    signs[t, i] = 1
                else:
                    if len(owners[e]) == 2:
                        raise MeshError(f"edge {key} shared by more than two triangles")
                    if edges[e] != (vb, va):
                        raise MeshError(f"inconsistent orientation across edge {key}")
                    owners[e].append(t)
                    signs[t, i] = -1
                t2e[t, i] = e

        e2t = np.full((len(edges), 2), -1, dtype=np.int64)
        for e, own in enumerate(owners):
            e2t[e, : len(own)] = own

        diffs = p[:, [0, 1, 2]] - p[:, [1, 2, 0]]
        h = np.sqrt((diffs**2).sum(axis=2)).max(axis=1)

        mesh = cls(
            vertices=vertices,
            triangles=triangles,
            edges=np.array(edges, dtype=np.int64),
            triangle_to_edges=t2e,
            edge_signs=signs,
            edge_to_triangles=e2t,
            boundary_edge_flags=e2t[:, 1] < 0,
            h_per_element=h,
            areas=areas,
        )
        for arr in (
            mesh.vertices,
            mesh.triangles,
            mesh.edges,
            mesh.triangle_to_edges,
            mesh.edge_signs,
            mesh.edge_to_triangles,
            mesh.boundary_edge_flags,
            mesh.h_per_element,
            mesh.areas,
        ):
            arr.flags.writeable = False
        return mesh

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def h_max(self) -> float:
        return float(self.h_per_element.max())

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_normals(self) -> np.ndarray:
        """Unit normals in the global orientation of each edge."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def jacobians(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine map Jacobians ``J[t]`` with columns ``p1-p0, p2-p0`` and ``det J``."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return J, 2.0 * self.areas


def build_structured_mesh(m: int) -> Triangulation:
    """Uniform right-triangle mesh of the unit square with ``m`` cells per side.

    Each square cell is cut along its anti-diagonal, so red refinement of the
    result reproduces ``build_structured_mesh(2 * m)`` up to numbering.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    m = int(m)
    s = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(s, s)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(m), np.arange(m))
    i, j = i.ravel(), j.ravel()
    a = j * (m + 1) + i
    b = a + 1
    d = a + (m + 1)
    c = d + 1
    lower = np.column_stack([a, b, d])
    upper = np.column_stack([b, c, d])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Triangulation.from_arrays(vertices, triangles)


def refine_uniform(mesh: Triangulation) -> Triangulation:
    """Red refinement: split every triangle into four similar children."""
    nv = mesh.n_vertices
    ev = mesh.edges
    midpoints = 0.5 * (mesh.vertices[ev[:, 0]] + mesh.vertices[ev[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    v0, v1, v2 = mesh.triangles.T
    m0, m1, m2 = (nv + mesh.triangle_to_edges).T
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([m2, v1, m0]),
            np.column_stack([m1, m0, v2]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Triangulation.from_arrays(vertices, children)


def inradii(mesh: Triangulation) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    perimeter = np.linalg.norm(p - p[:, [1, 2, 0]], axis=2).sum(axis=1)
    return 2.0 * mesh.areas / perimeter


def shape_regularity(mesh: Triangulation) -> float:
    """Largest ratio of element diameter to inscribed-circle diameter."""
    r = inradii(mesh)
    if np.any(r <= 0.0) or np.any(mesh.areas <= 0.0):
        raise MeshError("degenerate element with zero area")
    return float(np.max(mesh.h_per_element / (2.0 * r)))


def element_centroid(mesh: Triangulation, t: int) -> np.ndarray:
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"element index {t} out of range [0, {mesh.n_triangles})")
    return mesh.vertices[mesh.triangles[t]].mean(axis=0)


def read_mesh(path: str | Path) -> Triangulation:
    """Read the plain-text format written by :func:`write_mesh`.

    Layout: ``vertices N`` followed by N lines ``x y``, then ``triangles M``
    followed by M lines ``i j k`` (0-based, counterclockwise).  Blank lines
    and ``#`` comments are ignored.
    """
    lines = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text.split()))

    def header(pos: int, name: str) -> int:
        if pos >= len(lines):
            raise MeshError(f"{path}: missing '{name}' header")
        lineno, tok = lines[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshError(f"{path}:{lineno}: expected '{name} <count>'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshError(f"{path}:{lineno}: bad count {tok[1]!r}") from None
        if count < 0:
            raise MeshError(f"{path}:{lineno}: negative count")
        return count

    def block(pos: int, count: int, width: int, conv):
        rows = []
        for lineno, tok in lines[pos : pos + count]:
            if len(tok) != width:
                raise MeshError(f"{path}:{lineno}: expected {width} values")
            try:
                rows.append([conv(v) for v in tok])
            except ValueError:
                raise MeshError(f"{path}:{lineno}: cannot parse {' '.join(tok)!r}") from None
        if len(rows) != count:
            raise MeshError(f"{path}: expected {count} rows, file ended early")
        return rows

    nv = header(0, "vertices")
    verts = block(1, nv, 2, float)
    nt = header(1 + nv, "triangles")
    tris = block(2 + nv, nt, 3, int)
    if len(lines) > 2 + nv + nt:
        lineno = lines[2 + nv + nt][0]
        raise MeshError(f"{path}:{lineno}: trailing content")
    return Triangulation.from_arrays(np.array(verts).reshape(-1, 2), np.array(tris).reshape(-1, 3))


def write_mesh(mesh: Triangulation, path: str | Path) -> None:
    out = [f"vertices {mesh.n_vertices}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out.append(f"triangles {mesh.n_triangles}")
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    Path(path).write_text("\n".join(out) + "\n")
