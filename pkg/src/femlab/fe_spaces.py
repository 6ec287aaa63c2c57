"""Finite element spaces RT_k, BDM_k and discontinuous P_k on triangles.

Vector-valued reference bases are dual to edge normal moments against
shifted Legendre polynomials (plus interior moments for RT_1) and are
mapped by the contravariant Piola transform.  Global edge dofs use the
mesh's edge orientation; since a global edge is traversed by its two
triangles in opposite directions, the local-to-global sign of the moment
against the degree-j Legendre polynomial is ``s ** (j + 1)`` with ``s`` the
normal sign stored in ``Triangulation.edge_signs``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .coefficients import Field, as_field
from .errors import SpaceError
from .mesh import _LOCAL_EDGES, Triangulation
from .quadrature import Quadrature, gauss_legendre_unit, triangle_rule

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# A vector polynomial is a pair of {(i, j): coefficient} dicts for x**i y**j.
_Poly = dict[tuple[int, int], float]


def _eval_poly(poly: _Poly, x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape[:-1])
    for (i, j), c in poly.items():
        out = out + c * x[..., 0] ** i * x[..., 1] ** j
    return out


def _diff(poly: _Poly, axis: int) -> _Poly:
    out: _Poly = {}
    for (i, j), c in poly.items():
        p = (i, j)[axis]
        if p:
            key = (i - 1, j) if axis == 0 else (i, j - 1)
            out[key] = out.get(key, 0.0) + c * p
    return out


def _monomials(k: int) -> list[tuple[int, int]]:
    return [(d - j, j) for d in range(k + 1) for j in range(d + 1)]


def _spanning_set(kind: str, k: int) -> list[tuple[_Poly, _Poly]]:
    funcs = []
    for m in _monomials(k):
        funcs.append(({m: 1.0}, {}))
        funcs.append(({}, {m: 1.0}))
    if kind == "RT":
        for i, j in [(k - j, j) for j in range(k + 1)]:
            funcs.append(({(i + 1, j): 1.0}, {(i, j + 1): 1.0}))
    return funcs


def shifted_legendre(j: int, t: np.ndarray) -> np.ndarray:
    if j == 0:
        return np.ones_like(t)
    if j == 1:
        return 2.0 * t - 1.0
    raise SpaceError("edge moments only implemented up to degree 1")


@dataclass(frozen=True, eq=False)
class VectorReferenceElement:
    """Nodal basis of RT_k or BDM_k on the reference triangle."""

    kind: str
    degree: int
    n_edge_moments: int
    n_interior: int
    coeffs: np.ndarray = field(repr=False)  # spanning set -> nodal basis
    span: tuple = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.span)

    def _span_values(self, x):
        return np.stack(
            [np.stack([_eval_poly(px, x), _eval_poly(py, x)], axis=-1) for px, py in self.span],
            axis=-2,
        )

    def _span_div(self, x):
        return np.stack(
            [_eval_poly(_diff(px, 0), x) + _eval_poly(_diff(py, 1), x) for px, py in self.span],
            axis=-1,
        )

    def values(self, x: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape (..., dim, 2)."""
        return np.einsum("...si,sb->...bi", self._span_values(np.asarray(x, float)), self.coeffs)

    def divergence(self, x: np.ndarray) -> np.ndarray:
        return self._span_div(np.asarray(x, float)) @ self.coeffs


def reference_dofs(vals_fn, n_edge_moments: int, n_interior: int) -> np.ndarray:
    """Apply the reference dof functionals to a vector function.

    ``vals_fn(x)`` returns values of shape (npts, m, 2); the result has shape
    (ndofs, m).  Edge dofs come first, edge-major, then interior moments.
    """
    t, wt = gauss_legendre_unit(4)
    rows = []
    for a, b in _LOCAL_EDGES:
        pa, pb = REF_VERTICES[a], REF_VERTICES[b]
        d = pb - pa
        length = np.hypot(*d)
        n = np.array([d[1], -d[0]]) / length
        vals = vals_fn(pa + t[:, None] * d)
        flux = vals @ n
        for j in range(n_edge_moments):
            rows.append((wt * shifted_legendre(j, t) * length) @ flux)
    if n_interior:
        q = triangle_rule()
        vals = vals_fn(q.ref_points)
        for c in range(n_interior):
            rows.append(q.weights @ vals[..., c])
    return np.array(rows)


@lru_cache(maxsize=None)
def vector_reference_element(kind: str, degree: int) -> VectorReferenceElement:
    if kind == "RT":
        if degree not in (0, 1):
            raise SpaceError(f"RT_{degree} not supported (k in {{0, 1}})")
        n_edge, n_int = degree + 1, 2 * degree
    elif kind == "BDM":
        if degree != 1:
            raise SpaceError(f"BDM_{degree} not supported (only BDM_1)")
        n_edge, n_int = 2, 0
    else:
        raise SpaceError(f"unknown vector element {kind!r}")
    span = tuple(_spanning_set(kind, degree))
    probe = VectorReferenceElement(kind, degree, n_edge, n_int, np.eye(len(span)), span)
    D = reference_dofs(probe._span_values, n_edge, n_int)
    if D.shape[0] != D.shape[1]:
        raise SpaceError(f"{kind}_{degree}: {D.shape[0]} dofs for {D.shape[1]} functions")
    coeffs = np.linalg.inv(D)
    coeffs.flags.writeable = False
    return VectorReferenceElement(kind, degree, n_edge, n_int, coeffs, span)


def scalar_reference_values(degree: int, x: np.ndarray) -> np.ndarray:
    """DG reference basis: 1 for P0, barycentric coordinates for P1."""
    x = np.asarray(x, float)
    if degree == 0:
        return np.ones(x.shape[:-1] + (1,))
    if degree == 1:
        return np.stack([1.0 - x[..., 0] - x[..., 1], x[..., 0], x[..., 1]], axis=-1)
    raise SpaceError(f"P_{degree} not supported (k in {{0, 1}})")


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Global finite element space on a mesh.

    ``dof_map[t, i]`` is the global index of local basis function ``i`` on
    element ``t`` and ``dof_signs[t, i]`` the sign it enters with.
    """

    kind: str  # "RT", "BDM" or "DG"
    degree: int
    mesh: Triangulation
    n_dofs: int
    dof_map: np.ndarray
    dof_signs: np.ndarray
    reference: VectorReferenceElement | None = None

    @property
    def is_vector(self) -> bool:
        return self.kind != "DG"

    @property
    def local_dim(self) -> int:
        return self.dof_map.shape[1]

    def __repr__(self) -> str:
        return f"FeSpace({self.kind}_{self.degree}, n_dofs={self.n_dofs}, nt={self.mesh.n_triangles})"

    def evaluate(self, ref_points: np.ndarray, elements=None):
        """Signed physical basis data at reference points on each element.

        Vector spaces return ``(values, divergences)`` with shapes
        (nt, npts, nloc, 2) and (nt, npts, nloc); DG returns values
        (nt, npts, nloc).
        """
        return evaluate_basis(self, elements, ref_points)


def flux_space(mesh: Triangulation, kind: str, degree: int) -> FeSpace:
    ref = vector_reference_element(kind, degree)
    ne_m, n_int = ref.n_edge_moments, ref.n_interior
    nt = mesh.n_triangles
    n_edge_dofs = mesh.n_edges * ne_m

    j = np.arange(ne_m)
    edge_map = mesh.triangle_to_edges[:, :, None] * ne_m + j  # (nt, 3, ne_m)
    s = mesh.edge_signs[:, :, None]
    edge_signs = np.where(j % 2 == 0, s, 1)  # s ** (j + 1) for j in {0, 1}
    dof_map = edge_map.reshape(nt, -1)
    dof_signs = edge_signs.reshape(nt, -1)
    if n_int:
        interior = n_edge_dofs + np.arange(nt * n_int).reshape(nt, n_int)
        dof_map = np.hstack([dof_map, interior])
        dof_signs = np.hstack([dof_signs, np.ones((nt, n_int), dtype=dof_signs.dtype)])
    n_dofs = n_edge_dofs + nt * n_int
    dof_map.flags.writeable = False
    dof_signs = dof_signs.astype(float)
    dof_signs.flags.writeable = False
    return FeSpace(kind, degree, mesh, n_dofs, dof_map, dof_signs, ref)


def dg_space(mesh: Triangulation, degree: int) -> FeSpace:
    nloc = (degree + 1) * (degree + 2) // 2
    scalar_reference_values(degree, np.zeros(2))  # validates degree
    nt = mesh.n_triangles
    dof_map = np.arange(nt * nloc).reshape(nt, nloc)
    dof_map.flags.writeable = False
    signs = np.ones((nt, nloc))
    signs.flags.writeable = False
    return FeSpace("DG", degree, mesh, nt * nloc, dof_map, signs)


def make_space(mesh: Triangulation, kind: str, degree: int) -> FeSpace:
    kind = kind.upper()
    if kind == "DG":
        return dg_space(mesh, degree)
    return flux_space(mesh, kind, degree)


def triangle_jacobians(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians and determinants for a batch of triangles (n, 3, 2)."""
    v = np.asarray(vertices, float)
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    return J, J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]


def piola_basis(ref: VectorReferenceElement, J: np.ndarray, det: np.ndarray, x: np.ndarray):
    """Unsigned Piola-mapped basis: values (n, npts, nloc, 2), divergences (n, npts, nloc)."""
    if np.any(det <= 0.0):
        raise SpaceError("degenerate element Jacobian")
    v_hat = ref.values(x)
    d_hat = ref.divergence(x)
    vals = np.einsum("tij,qbj->tqbi", J, v_hat) / det[:, None, None, None]
    divs = d_hat[None] / det[:, None, None]
    return vals, divs


def evaluate_basis(space: FeSpace, t, ref_points: np.ndarray):
    """Physical basis values (and divergences) on element(s) ``t``.

    ``t`` may be an int, an index array, or None for all elements.  Vector
    bases use the contravariant Piola map ``J v / det J``, ``div v / det J``.
    """
    mesh = space.mesh
    all_t = np.arange(mesh.n_triangles)
    if t is None:
        idx = all_t
    else:
        idx = np.atleast_1d(np.asarray(t))
        if idx.size and (idx.min() < 0 or idx.max() >= mesh.n_triangles):
            raise IndexError(f"element index out of range [0, {mesh.n_triangles})")
    x = np.asarray(ref_points, float).reshape(-1, 2)
    signs = space.dof_signs[idx]
    if not space.is_vector:
        vals = scalar_reference_values(space.degree, x)
        out = np.broadcast_to(vals, (len(idx),) + vals.shape).copy()
        return out[0] if np.ndim(t) == 0 and t is not None else out

    J, det = mesh.jacobians()
    vals, divs = piola_basis(space.reference, J[idx], det[idx], x)
    vals = vals * signs[:, None, :, None]
    divs = divs * signs[:, None, :]
    if np.ndim(t) == 0 and t is not None:
        return vals[0], divs[0]
    return vals, divs


def tabulate(space: FeSpace, quad: Quadrature | None = None):
    return evaluate_basis(space, None, (quad or triangle_rule()).ref_points)


def _weights(mesh: Triangulation, quad: Quadrature) -> np.ndarray:
    """Physical quadrature weights, shape (nt, nq)."""
    return 2.0 * mesh.areas[:, None] * quad.weights[None, :]


def scatter_matrix(rows_space: FeSpace, cols_space: FeSpace, local: np.ndarray) -> np.ndarray:
    """Add element matrices (nt, nrow, ncol) into a dense global matrix."""
    out = np.zeros((rows_space.n_dofs, cols_space.n_dofs))
    r = rows_space.dof_map[:, :, None]
    c = cols_space.dof_map[:, None, :]
    np.add.at(out, (np.broadcast_to(r, local.shape), np.broadcast_to(c, local.shape)), local)
    return out


def scatter_vector(space: FeSpace, local: np.ndarray) -> np.ndarray:
    out = np.zeros(space.n_dofs)
    np.add.at(out, space.dof_map, local)
    return out


def weighted_flux_mass(space: FeSpace, Ainv: np.ndarray, quad: Quadrature | None = None) -> np.ndarray:
    """Global Gram matrix of (A^-1 phi_j, phi_i); ``Ainv`` is (nt, nq, 2, 2)."""
    quad = quad or triangle_rule()
    vals, _ = tabulate(space, quad)
    w = _weights(space.mesh, quad)
    local = np.einsum("tq,tqai,tqij,tqbj->tab", w, vals, Ainv, vals)
    return scatter_matrix(space, space, local)


def _weight_inverse(A, mesh: Triangulation, quad: Quadrature) -> np.ndarray:
    if A is None:
        A = 1.0
    field_ = A if isinstance(A, Field) else as_field(A, (2, 2))
    return np.linalg.inv(field_.evaluate(mesh, quad))


def local_scalar_mass(mesh: Triangulation, k: int, quad: Quadrature | None = None) -> np.ndarray:
    quad = quad or triangle_rule()
    phi = scalar_reference_values(k, quad.ref_points)
    ref_mass = np.einsum("q,qa,qb->ab", quad.weights, phi, phi)
    return 2.0 * mesh.areas[:, None, None] * ref_mass[None]


def l2_project_Pk(f, mesh: Triangulation, k: int, quad: Quadrature | None = None) -> np.ndarray:
    """Elementwise L2 projection onto P_k in the DG reference basis.

    ``f`` is a number, array, callable of points, or :class:`Field`;
    scalar data gives coefficients (nt, nloc), vector data (nt, nloc, 2).
    Already-sampled values of shape (nt, nq[, 2]) are accepted as well.
    """
    quad = quad or triangle_rule()
    vals = _sample_any(f, mesh, quad)
    phi = scalar_reference_values(k, quad.ref_points)
    w = _weights(mesh, quad)
    rhs = np.einsum("tq,qa,tq...->ta...", w, phi, vals)
    M = local_scalar_mass(mesh, k, quad)
    if rhs.ndim == 2:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    return np.linalg.solve(M, rhs)


def _sample_any(f, mesh: Triangulation, quad: Quadrature) -> np.ndarray:
    if isinstance(f, np.ndarray) and f.shape[:2] == (mesh.n_triangles, len(quad)):
        return f
    if isinstance(f, Field):
        return f.evaluate(mesh, quad)
    if callable(f):
        from .coefficients import physical_points

        return np.asarray(f(physical_points(mesh, quad.ref_points)), float)
    arr = np.asarray(f, float)
    return np.broadcast_to(arr, (mesh.n_triangles, len(quad)) + arr.shape).copy()


def evaluate_dg(coeffs: np.ndarray, k: int, ref_points: np.ndarray) -> np.ndarray:
    """Evaluate per-element DG coefficients (nt, nloc[, 2]) at reference points."""
    phi = scalar_reference_values(k, np.asarray(ref_points, float).reshape(-1, 2))
    return np.einsum("qa,ta...->tq...", phi, coeffs)


def evaluate_flux(space: FeSpace, coeffs: np.ndarray, quad: Quadrature | None = None):
    """Values (nt, nq, 2) and divergence (nt, nq) of a global flux vector."""
    vals, divs = tabulate(space, quad)
    c = coeffs[space.dof_map]
    return np.einsum("tqai,ta->tqi", vals, c), np.einsum("tqa,ta->tq", divs, c)


def interpolate_best_flux(sigma, space: FeSpace, A=None, quad: Quadrature | None = None) -> np.ndarray:
    """Coefficients of the A^-1-weighted L2 best approximation of ``sigma``."""
    if not space.is_vector:
        raise SpaceError("interpolate_best_flux needs an RT or BDM space")
    quad = quad or triangle_rule()
    mesh = space.mesh
    Ainv = _weight_inverse(A, mesh, quad)
    s = _sample_any(sigma, mesh, quad)
    vals, _ = tabulate(space, quad)
    w = _weights(mesh, quad)
    rhs = scatter_vector(space, np.einsum("tq,tqai,tqij,tqj->ta", w, vals, Ainv, s))
    G = weighted_flux_mass(space, Ainv, quad)
    return np.linalg.solve(G, rhs)


def flux_distance(sigma, space: FeSpace, A=None, quad: Quadrature | None = None) -> float:
    """dist(sigma, space) in the A^-1-weighted L2 norm."""
    quad = quad or triangle_rule()
    c = interpolate_best_flux(sigma, space, A, quad)
    s = _sample_any(sigma, space.mesh, quad)
    vh, _ = evaluate_flux(space, c, quad)
    Ainv = _weight_inverse(A, space.mesh, quad)
    e = s - vh
    w = _weights(space.mesh, quad)
    return float(np.sqrt(np.einsum("tq,tqi,tqij,tqj->", w, e, Ainv, e)))
