"""Assembly of the mixed bilinear form, the H-norm Gram and load vectors.

Unknowns are ordered flux block first, scalar block second.  ``B[i, j]``
is the form evaluated at trial basis function ``j`` and test function
``i``:

    b((s, u), (t, v)) = (A^-1 s, t) - (u, div t) + (v, div s)
                        + (u, b1 . t) - (v, b2 . s) + (gamma u, v)

All terms share one quadrature rule, so algebraic identities between
assembled matrices hold to rounding even when integrals are inexact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg

from .coefficients import CoefficientSet, Formulation, physical_points
from .errors import FemlabError, SpaceError
from .fe_spaces import (
    FeSpace,
    _weights,
    scalar_reference_values,
    scatter_matrix,
    scatter_vector,
    tabulate,
)
from .mesh import _LOCAL_EDGES, Triangulation
from .quadrature import Quadrature, gauss_legendre_unit, triangle_rule


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    B: np.ndarray
    M_H: np.ndarray
    M_L: np.ndarray
    rhs: np.ndarray
    block_sizes: tuple[int, int]
    flux_space: FeSpace
    scalar_space: FeSpace
    coeffs: CoefficientSet

    @property
    def n_dofs(self) -> int:
        return self.B.shape[0]

    @property
    def mesh(self) -> Triangulation:
        return self.flux_space.mesh

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.block_sizes[0]
        return x[:n], x[n:]

    def h_norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(x @ self.M_H @ x))

    def with_rhs(self, rhs: np.ndarray) -> "AssembledSystem":
        return AssembledSystem(
            self.B, self.M_H, self.M_L, rhs, self.block_sizes,
            self.flux_space, self.scalar_space, self.coeffs,
        )


def _check_spaces(mesh: Triangulation, flux: FeSpace, scalar: FeSpace) -> None:
    if flux.mesh is not mesh or scalar.mesh is not mesh:
        raise SpaceError("spaces must be built on the given mesh")
    if not flux.is_vector or scalar.is_vector:
        raise SpaceError("expected an RT/BDM flux space and a DG scalar space")


def local_blocks(mesh, flux: FeSpace, scalar: FeSpace, coeffs: CoefficientSet, quad: Quadrature):
    """Element matrices of every term of the form, keyed by name."""
    s = coeffs.sample(mesh, quad)
    vals, divs = tabulate(flux, quad)
    phi = scalar_reference_values(scalar.degree, quad.ref_points)
    w = _weights(mesh, quad)
    return {
        "mass_A": np.einsum("tq,tqai,tqij,tqbj->tab", w, vals, s.Ainv, vals),
        "divdiv": np.einsum("tq,tqa,tqb->tab", w, divs, divs),
        "div": np.einsum("tq,qa,tqb->tab", w, phi, divs),
        "b1": np.einsum("tq,qb,tqi,tqai->tab", w, phi, s.b1, vals),
        "b2": np.einsum("tq,qa,tqi,tqbi->tab", w, phi, s.b2, vals),
        "gamma": np.einsum("tq,tq,qa,qb->tab", w, s.gamma, phi, phi),
        "mass": np.einsum("tq,qa,qb->tab", w, phi, phi),
    }


def assemble_b(
    mesh: Triangulation,
    flux: FeSpace,
    scalar: FeSpace,
    coeffs: CoefficientSet,
    quad: Quadrature | None = None,
) -> AssembledSystem:
    """Assemble B, the H-norm Gram M_H and the weighted L2 Gram M_L.

    The load vector is zero; see :func:`assemble_rhs`.
    """
    _check_spaces(mesh, flux, scalar)
    quad = quad or triangle_rule()
    loc = local_blocks(mesh, flux, scalar, coeffs, quad)
    sym = lambda a: 0.5 * (a + np.swapaxes(a, 1, 2))  # noqa: E731

    MA = scatter_matrix(flux, flux, sym(loc["mass_A"]))
    DD = scatter_matrix(flux, flux, sym(loc["divdiv"]))
    D = scatter_matrix(scalar, flux, loc["div"])
    E1 = scatter_matrix(flux, scalar, loc["b1"])
    E2 = scatter_matrix(scalar, flux, loc["b2"])
    G = scatter_matrix(scalar, scalar, sym(loc["gamma"]))
    Ms = scatter_matrix(scalar, scalar, sym(loc["mass"]))

    nf, ns = flux.n_dofs, scalar.n_dofs
    Z = np.zeros((nf, ns))
    B = np.block([[MA, -D.T + E1], [D - E2, G]])
    M_L = np.block([[MA, Z], [Z.T, Ms]])
    M_H = np.block([[MA + DD, Z], [Z.T, Ms]])
    return AssembledSystem(B, M_H, M_L, np.zeros(nf + ns), (nf, ns), flux, scalar, coeffs)


def assemble_rhs(
    mesh: Triangulation,
    scalar: FeSpace,
    f,
    quad: Quadrature | None = None,
    flux: FeSpace | None = None,
    dirichlet: Callable | None = None,
) -> np.ndarray:
    """Load vector with entries (f, v_i) on the scalar block.

    Without ``flux`` only the scalar block is returned.  With ``flux`` the
    full vector is returned; its flux block is zero unless a Dirichlet
    trace ``dirichlet`` is given, which contributes ``-<g, t.n>`` on the
    boundary (homogeneous data needs no term: it is natural in the mixed
    form).
    """
    from .fe_spaces import _sample_any

    quad = quad or triangle_rule()
    fv = _sample_any(f, mesh, quad)
    phi = scalar_reference_values(scalar.degree, quad.ref_points)
    w = _weights(mesh, quad)
    r_s = scatter_vector(scalar, np.einsum("tq,tq,qa->ta", w, fv, phi))
    if flux is None:
        return r_s
    r_f = np.zeros(flux.n_dofs)
    if dirichlet is not None:
        r_f = -boundary_flux_load(flux, dirichlet)
    return np.concatenate([r_f, r_s])


def boundary_flux_load(flux: FeSpace, g: Callable, n_gauss: int = 6) -> np.ndarray:
    """Vector with entries <g, phi_i . n> over the domain boundary."""
    mesh = flux.mesh
    t_pts, t_w = gauss_legendre_unit(n_gauss)
    ref_v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    out = np.zeros(flux.n_dofs)
    bnd = np.flatnonzero(mesh.boundary_edge_flags)
    if bnd.size == 0:
        return out
    tri = mesh.edge_to_triangles[bnd, 0]
    local = np.argmax(mesh.triangle_to_edges[tri] == bnd[:, None], axis=1)
    normals = mesh.edge_normals[bnd]
    lengths = mesh.edge_lengths[bnd]
    for i, (a, b) in enumerate(_LOCAL_EDGES):
        sel = local == i
        if not sel.any():
            continue
        ref_pts = ref_v[a] + t_pts[:, None] * (ref_v[b] - ref_v[a])
        from .fe_spaces import evaluate_basis

        vals, _ = evaluate_basis(flux, tri[sel], ref_pts)  # (n, ng, nloc, 2)
        x = physical_points(mesh, ref_pts)[tri[sel]]
        gv = np.asarray(g(x), float)
        contrib = np.einsum("g,e,eg,egai,ei->ea", t_w, lengths[sel], gv, vals, normals[sel])
        np.add.at(out, flux.dof_map[tri[sel]], contrib)
    return out


def duality_matrix(system: AssembledSystem) -> np.ndarray:
    """S = diag(+I on the flux block, -I on the scalar block)."""
    nf, ns = system.block_sizes
    return np.concatenate([np.ones(nf), -np.ones(ns)])


def duality_defect(cons: AssembledSystem, div: AssembledSystem) -> float:
    """max |B_div - S B_cons^T S| entrywise."""
    s = duality_matrix(cons)
    return float(np.abs(div.B - s[:, None] * cons.B.T * s[None, :]).max())


def assemble_pair(mesh, space_kind: str, degree: int, coeffs: CoefficientSet, scalar_degree=None, quad=None):
    """Build the flux/scalar spaces and assemble them in one call."""
    from .fe_spaces import dg_space, flux_space

    V = flux_space(mesh, space_kind, degree)
    Q = dg_space(mesh, degree if scalar_degree is None else scalar_degree)
    return assemble_b(mesh, V, Q, coeffs, quad)


def gram_cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD Gram matrix."""
    try:
        return scipy.linalg.cholesky(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FemlabError(f"Gram matrix is not positive definite: {exc}") from None


def gram_condition(M: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(M)
    return float(ev[-1] / ev[0])


@dataclass(frozen=True)
class ManufacturedProblem:
    f: Callable
    sigma: Callable
    div_sigma: Callable
    u: Callable
    grad_u: Callable


def manufactured_problem(u, grad_u, hess_u, coeffs: CoefficientSet, formulation=None) -> ManufacturedProblem:
    """Right-hand side and exact flux for a prescribed scalar solution.

    Callbacks take points (..., 2) and return (...), (..., 2), (..., 2, 2).
    ``A`` and ``b`` must be spatially constant; ``gamma`` may be any
    constant or smooth field.
    """
    if u is None or grad_u is None or hess_u is None:
        raise FemlabError("manufactured problem needs u, grad u and the Hessian of u")
    formulation = Formulation(formulation or coeffs.formulation)
    if formulation is Formulation.GENERAL:
        raise FemlabError("manufactured problems need the conservative or divergence form")
    if not (coeffs.A.is_constant and coeffs.b.is_constant):
        raise FemlabError("manufactured problems need spatially constant A and b")
    A = np.asarray(coeffs.A.value, float)
    bvec = np.asarray(coeffs.b.value, float)
    gamma = coeffs.gamma.at_points

    def lap_A(x):
        return np.einsum("ij,...ij->...", A, hess_u(x))

    if formulation is Formulation.CONSERVATIVE:
        def sigma(x):
            return -np.einsum("ij,...j->...i", A, grad_u(x)) - u(x)[..., None] * bvec

        def div_sigma(x):
            return -lap_A(x) - grad_u(x) @ bvec
    else:
        def sigma(x):
            return -np.einsum("ij,...j->...i", A, grad_u(x))

        def div_sigma(x):
            return -lap_A(x)

    if formulation is Formulation.CONSERVATIVE:
        def f(x):
            return div_sigma(x) + gamma(x) * u(x)
    else:
        def f(x):
            return div_sigma(x) + grad_u(x) @ bvec + gamma(x) * u(x)

    return ManufacturedProblem(f=f, sigma=sigma, div_sigma=div_sigma, u=u, grad_u=grad_u)


def sine_solution():
    """u = sin(pi x) sin(pi y) with its gradient and Hessian."""
    pi = np.pi

    def u(x):
        return np.sin(pi * x[..., 0]) * np.sin(pi * x[..., 1])

    def grad(x):
        sx, sy = np.sin(pi * x[..., 0]), np.sin(pi * x[..., 1])
        cx, cy = np.cos(pi * x[..., 0]), np.cos(pi * x[..., 1])
        return pi * np.stack([cx * sy, sx * cy], axis=-1)

    def hess(x):
        sx, sy = np.sin(pi * x[..., 0]), np.sin(pi * x[..., 1])
        cx, cy = np.cos(pi * x[..., 0]), np.cos(pi * x[..., 1])
        h = pi**2 * np.stack([-sx * sy, cx * cy, cx * cy, -sx * sy], axis=-1)
        return h.reshape(x.shape[:-1] + (2, 2))

    return u, grad, hess


def bubble_solution():
    """u = x(1-x) y(1-y) with its gradient and Hessian."""

    def u(x):
        a, b = x[..., 0], x[..., 1]
        return a * (1 - a) * b * (1 - b)

    def grad(x):
        a, b = x[..., 0], x[..., 1]
        return np.stack([(1 - 2 * a) * b * (1 - b), a * (1 - a) * (1 - 2 * b)], axis=-1)

    def hess(x):
        a, b = x[..., 0], x[..., 1]
        h = np.stack(
            [-2 * b * (1 - b), (1 - 2 * a) * (1 - 2 * b), (1 - 2 * a) * (1 - 2 * b), -2 * a * (1 - a)],
            axis=-1,
        )
        return h.reshape(x.shape[:-1] + (2, 2))

    return u, grad, hess


def export_matrix(path: str | Path, matrix: np.ndarray, comment: str = "") -> None:
    """Write a dense matrix in Matrix Market array format."""
    scipy.io.mmwrite(str(path), np.asarray(matrix), comment=comment, precision=17)
