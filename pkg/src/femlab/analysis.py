"""Inf-sup constants, mixed solves, error functionals and RT/BDM checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .assembly import AssembledSystem, ManufacturedProblem, gram_cholesky
from .errors import FemlabError, SingularSystemError
from .fe_spaces import (
    FeSpace,
    _sample_any,
    _weight_inverse,
    _weights,
    evaluate_dg,
    evaluate_flux,
    flux_distance,
    l2_project_Pk,
    local_scalar_mass,
    piola_basis,
    scalar_reference_values,
    scatter_matrix,
    scatter_vector,
    tabulate,
    triangle_jacobians,
    vector_reference_element,
    weighted_flux_mass,
)
from .quadrature import Quadrature, triangle_rule

log = logging.getLogger(__name__)

# Negative smallest eigenvalues this close to zero (relative) are rounding.
_CLAMP_TOL = 1e-12


@dataclass
class StabilityReport:
    h_max: float
    n_dof: int
    beta_h: float
    formulation: str
    eigenvalue_residual: float
    mesh_level: int | None = None
    minimizer: np.ndarray | None = field(default=None, repr=False)


def whitened_operator(system: AssembledSystem) -> tuple[np.ndarray, np.ndarray]:
    """W = L^-1 B L^-T with M_H = L L^T; returns (W, L)."""
    L = gram_cholesky(system.M_H)
    X = scipy.linalg.solve_triangular(L, system.B, lower=True)
    W = scipy.linalg.solve_triangular(L, X.T, lower=True).T
    return W, L


def compute_inf_sup(system: AssembledSystem, mesh_level: int | None = None) -> StabilityReport:
    """Discrete inf-sup constant of B in the H-norm.

    The smallest eigenpair of W^T W for the Cholesky-whitened W gives
    beta_h**2 and, mapped back by L^-T, the unit-norm trial vector that
    attains the infimum.
    """
    W, L = whitened_operator(system)
    N = W.T @ W
    evals, evecs = scipy.linalg.eigh(N)
    lam, v = evals[0], evecs[:, 0]
    scale = max(evals[-1], np.finfo(float).tiny)
    residual = float(np.linalg.norm(N @ v - lam * v) / scale)
    if lam < 0.0:
        if lam < -_CLAMP_TOL * scale:
            raise FemlabError(f"whitened normal matrix has negative eigenvalue {lam:.3e}")
        lam = 0.0
    x_min = scipy.linalg.solve_triangular(L, v, lower=True, trans="T")
    return StabilityReport(
        h_max=system.mesh.h_max,
        n_dof=system.n_dofs,
        beta_h=float(np.sqrt(lam)),
        formulation=system.coeffs.formulation.value,
        eigenvalue_residual=residual,
        mesh_level=mesh_level,
        minimizer=x_min,
    )


def inf_sup_svd_oracle(system: AssembledSystem) -> float:
    """Smallest singular value of M^-1/2 B M^-1/2 via the symmetric root."""
    ev, Q = np.linalg.eigh(system.M_H)
    R = (Q / np.sqrt(ev)) @ Q.T
    return float(np.linalg.svd(R @ system.B @ R, compute_uv=False).min())


def _lu_solve(A: np.ndarray, rhs: np.ndarray, what: str, rcond_min: float = 1e-14) -> np.ndarray:
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    anorm = np.abs(A).sum(axis=0).max()
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < rcond_min or np.any(np.diag(lu) == 0.0):
        raise SingularSystemError(f"{what} is singular", 1.0 / rcond if rcond > 0 else np.inf)
    return scipy.linalg.lu_solve((lu, piv), rhs)


def solve_mixed(system: AssembledSystem, rhs: np.ndarray | None = None) -> np.ndarray:
    """Solve B x = rhs (B is row-indexed by test functions)."""
    rhs = system.rhs if rhs is None else rhs
    x = _lu_solve(system.B, rhs, "mixed system matrix")
    res = np.linalg.norm(system.B @ x - rhs, 1)
    ref = np.linalg.norm(system.B, 1) * np.linalg.norm(x, 1) + np.linalg.norm(rhs, 1)
    if ref > 0 and res > 1e-11 * ref:
        log.warning("mixed solve relative residual %.3e", res / ref)
    return x


@dataclass
class ErrorReport:
    flux_error: float
    scalar_error: float
    best_flux: float
    proj_error_u: float
    osc_div: float
    osc_u: float
    h_max: float


def _l2(w: np.ndarray, e: np.ndarray) -> float:
    if e.ndim == w.ndim:
        return float(np.sqrt(np.einsum("tq,tq->", w, e * e)))
    return float(np.sqrt(np.einsum("tq,tqi->", w, e * e)))


def projection_residual(values: np.ndarray, mesh, k: int, quad: Quadrature) -> np.ndarray:
    """(1 - Pi_k) applied to sampled values (nt, nq[, 2])."""
    c = l2_project_Pk(values, mesh, k, quad)
    return values - evaluate_dg(c, k, quad.ref_points)


def compute_errors(
    system: AssembledSystem,
    x_h: np.ndarray,
    problem: ManufacturedProblem,
    quad: Quadrature | None = None,
) -> ErrorReport:
    """Errors, best approximations and oscillations for a manufactured solution."""
    quad = quad or triangle_rule()
    V, Q = system.flux_space, system.scalar_space
    mesh = V.mesh
    k = Q.degree
    w = _weights(mesh, quad)
    Ainv = _weight_inverse(system.coeffs.A, mesh, quad)
    s_c, u_c = system.split(x_h)

    sig = _sample_any(problem.sigma, mesh, quad)
    u = _sample_any(problem.u, mesh, quad)
    div_sig = _sample_any(problem.div_sigma, mesh, quad)

    sig_h, _ = evaluate_flux(V, s_c, quad)
    u_h = evaluate_dg(u_c[Q.dof_map], k, quad.ref_points)
    e = sig - sig_h
    flux_error = float(np.sqrt(np.einsum("tq,tqi,tqij,tqj->", w, e, Ainv, e)))
    h = mesh.h_per_element[:, None]
    u_res = projection_residual(u, mesh, k, quad)
    return ErrorReport(
        flux_error=flux_error,
        scalar_error=_l2(w, u - u_h),
        best_flux=flux_distance(sig, V, system.coeffs.A, quad),
        proj_error_u=_l2(w, u_res),
        osc_div=_l2(w, h * projection_residual(div_sig, mesh, k, quad)),
        osc_u=_l2(w, h * u_res),
        h_max=mesh.h_max,
    )


def fit_slope(h, e, last: int = 3) -> float:
    """Least-squares slope of log e against log h over the last levels."""
    h = np.asarray(h, float)[-last:]
    e = np.asarray(e, float)[-last:]
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass
class ConstrainedProjection:
    coeffs: np.ndarray
    distance: float  # ||p - p_h||_{A^-1}
    best_distance: float  # dist(p, M_k)
    osc_div: float  # ||h_T (1 - Pi_k) div p||
    constraint_residual: float
    ratio: float


def divergence_range_degree(space: FeSpace) -> int:
    return space.degree if space.kind == "RT" else space.degree - 1


def constrained_flux_projection(
    p,
    div_p,
    space: FeSpace,
    A=None,
    k: int | None = None,
    quad: Quadrature | None = None,
) -> ConstrainedProjection:
    """Minimise ||p - p_h||_{A^-1} over the flux space subject to div p_h = Pi_k div p.

    Solved as the KKT system [[G, D^T], [D, 0]] of the equality
    constrained least-squares problem; ``k`` defaults to the degree of
    the space's divergence range.
    """
    quad = quad or triangle_rule()
    mesh = space.mesh
    k = divergence_range_degree(space) if k is None else k
    from .fe_spaces import dg_space

    Q = dg_space(mesh, k)
    Ainv = _weight_inverse(A, mesh, quad)
    w = _weights(mesh, quad)
    vals, divs = tabulate(space, quad)
    phi = scalar_reference_values(k, quad.ref_points)

    p_v = _sample_any(p, mesh, quad)
    d_v = _sample_any(div_p, mesh, quad)
    G = weighted_flux_mass(space, Ainv, quad)
    g = scatter_vector(space, np.einsum("tq,tqai,tqij,tqj->ta", w, vals, Ainv, p_v))
    D = scatter_matrix(Q, space, np.einsum("tq,qa,tqb->tab", w, phi, divs))
    d = scatter_vector(Q, np.einsum("tq,qa,tq->ta", w, phi, d_v))

    nf, nq = space.n_dofs, Q.n_dofs
    K = np.block([[G, D.T], [D, np.zeros((nq, nq))]])
    sol = _lu_solve(K, np.concatenate([g, d]), "constrained projection KKT system", 1e-15)
    c = sol[:nf]

    M = local_scalar_mass(mesh, k, quad)
    target = np.linalg.solve(M, d[Q.dof_map][..., None])[..., 0]
    achieved = np.linalg.solve(M, (D @ c)[Q.dof_map][..., None])[..., 0]
    resid = float(np.abs(achieved - target).max() / max(1.0, np.abs(target).max()))

    ph, _ = evaluate_flux(space, c, quad)
    e = p_v - ph
    dist_c = float(np.sqrt(np.einsum("tq,tqi,tqij,tqj->", w, e, Ainv, e)))
    best = flux_distance(p_v, space, A, quad)
    osc = _l2(w, mesh.h_per_element[:, None] * projection_residual(d_v, mesh, k, quad))
    denom = best + osc
    return ConstrainedProjection(
        coeffs=c,
        distance=dist_c,
        best_distance=best,
        osc_div=osc,
        constraint_residual=resid,
        ratio=dist_c / denom if denom > 0 else (0.0 if dist_c == 0 else np.inf),
    )


def inner_approx_constant(k: int, n: int = 2) -> float:
    """n / ((n + 1)(n + k))."""
    return n / ((n + 1) * (n + k))


@dataclass
class InnerApproximation:
    """Per-element terms of ||tau - Pi_k tau|| <= C ||h_T div tau||."""

    lhs: np.ndarray
    rhs: np.ndarray
    identity_defect: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.lhs / self.rhs
        return np.where(self.rhs > 0, r, np.where(self.lhs > 0, np.inf, 0.0))

    @property
    def holds(self) -> np.ndarray:
        return self.lhs <= self.rhs + 1e-12


def inner_approximation_terms(
    kind: str,
    degree: int,
    vertices: np.ndarray,
    coeffs: np.ndarray,
    proj_degree: int | None = None,
    centers: np.ndarray | None = None,
    quad: Quadrature | None = None,
) -> InnerApproximation:
    """Evaluate both sides of the RT inner-approximation bound on a batch of triangles.

    ``vertices`` is (n, 3, 2), ``coeffs`` (n, nloc) in the local Piola
    basis.  ``identity_defect`` is the largest pointwise value of
    |(2 + k)(1 - Pi_k) tau - (1 - Pi_k)((div tau)(x - c))| with ``c`` the
    centroid unless ``centers`` is given, relative to the pointwise
    magnitude of the two sides.
    """
    quad = quad or triangle_rule()
    k = degree if proj_degree is None else proj_degree
    ref = vector_reference_element(kind, degree)
    vertices = np.asarray(vertices, float)
    J, det = triangle_jacobians(vertices)
    vals, divs = piola_basis(ref, J, det, quad.ref_points)
    tau = np.einsum("tqai,ta->tqi", vals, coeffs)
    div_tau = np.einsum("tqa,ta->tq", divs, coeffs)

    w = det[:, None] * quad.weights[None, :]
    phi = scalar_reference_values(k, quad.ref_points)
    Mref = np.einsum("q,qa,qb->ab", quad.weights, phi, phi)
    Minv = np.linalg.inv(Mref)

    def residual(f):
        # Pi_k on an affine image only needs the reference mass matrix.
        rhs = np.einsum("q,qa,tq...->ta...", quad.weights, phi, f)
        c = np.einsum("ab,tb...->ta...", Minv, rhs)
        return f - np.einsum("qa,ta...->tq...", phi, c)

    r_tau = residual(tau)
    lhs = np.sqrt(np.einsum("tq,tqi->t", w, r_tau**2))
    h = np.linalg.norm(vertices - vertices[:, [1, 2, 0]], axis=2).max(axis=1)
    rhs = inner_approx_constant(k) * h * np.sqrt(np.einsum("tq,tq->t", w, div_tau**2))

    x = vertices[:, 0][:, None, :] + np.einsum("tij,qj->tqi", J, quad.ref_points)
    c = vertices.mean(axis=1) if centers is None else np.asarray(centers, float)
    moment = div_tau[..., None] * (x - c[:, None, :])
    r_dx = residual(moment)
    scale = np.maximum(np.abs((2 + k) * tau).max(axis=(1, 2)), np.abs(moment).max(axis=(1, 2)))
    defect = np.abs((2 + k) * r_tau - r_dx).max(axis=(1, 2)) / np.maximum(scale, 1e-300)
    return InnerApproximation(lhs=lhs, rhs=rhs, identity_defect=defect)


def verify_lemma4(space: FeSpace, coeffs: np.ndarray, k: int | None = None) -> tuple[float, float, float]:
    """Global (lhs, rhs, ratio) for a global RT coefficient vector on a mesh."""
    if space.kind != "RT":
        raise FemlabError("the inner-approximation bound is an RT property")
    mesh = space.mesh
    local = coeffs[space.dof_map] * space.dof_signs
    terms = inner_approximation_terms(
        space.kind, space.degree, mesh.vertices[mesh.triangles], local, proj_degree=k
    )
    lhs = float(np.sqrt((terms.lhs**2).sum()))
    rhs = float(np.sqrt((terms.rhs**2).sum()))
    if not np.all(terms.holds):
        bad = int(np.flatnonzero(~terms.holds)[0])
        raise FemlabError(f"inner-approximation bound violated on element {bad}")
    return lhs, rhs, (lhs / rhs if rhs > 0 else 0.0)


def random_triangles(rng: np.random.Generator, n: int, max_shape: float = 5.0) -> np.ndarray:
    """Random triangles with h/(2 r_in) <= max_shape, random size and position."""
    out = np.empty((0, 3, 2))
    while len(out) < n:
        v = rng.uniform(-1.0, 1.0, size=(2 * n, 3, 2))
        J, det = triangle_jacobians(v)
        v = np.where((det < 0)[:, None, None], v[:, [0, 2, 1]], v)
        area = 0.5 * np.abs(det)
        edges = np.linalg.norm(v - v[:, [1, 2, 0]], axis=2)
        r_in = 2.0 * area / edges.sum(axis=1)
        ok = (area > 1e-3) & (edges.max(axis=1) / (2.0 * r_in) <= max_shape)
        v = v[ok]
        scale = rng.uniform(0.05, 3.0, size=len(v))
        shift = rng.uniform(-5.0, 5.0, size=(len(v), 1, 2))
        out = np.concatenate([out, v * scale[:, None, None] + shift])
    return out[:n]


@dataclass
class InnerApproxSweep:
    k: int
    samples: int
    max_ratio: float
    max_identity_defect: float
    violations: int


def inner_approx_sweep(k: int, samples: int, seed: int, batch: int = 2000) -> InnerApproxSweep:
    """Random RT_k fields on random well-shaped triangles."""
    rng = np.random.default_rng(seed)
    nloc = vector_reference_element("RT", k).dim
    max_ratio, max_defect, bad = 0.0, 0.0, 0
    done = 0
    while done < samples:
        n = min(batch, samples - done)
        tri = random_triangles(rng, n)
        c = rng.standard_normal((n, nloc))
        terms = inner_approximation_terms("RT", k, tri, c)
        max_ratio = max(max_ratio, float(terms.ratio.max()))
        max_defect = max(max_defect, float(terms.identity_defect.max()))
        bad += int((~terms.holds).sum())
        done += n
    return InnerApproxSweep(k, samples, max_ratio, max_defect, bad)


@dataclass
class CounterexampleResult:
    best_ratio: float
    witness_found: bool
    witness_coeffs: np.ndarray | None
    witness_lhs: float
    witness_rhs: float
    sampled_max_ratio: float


def bdm_counterexample_search(
    vertices: np.ndarray,
    trials: int,
    seed: int,
    proj_degree: int = 1,
    kind: str = "BDM",
    degree: int = 1,
) -> CounterexampleResult:
    """Look for fields violating the RT inner-approximation bound.

    Random coefficient vectors are scored by
    ||tau - Pi tau|| / (C ||h_T div tau|| + tiny).  Divergence-free fields
    of the space are then scanned deterministically: one with a nonzero
    projection residual has zero right-hand side and is an unconditional
    witness (ratio reported as inf).
    """
    vertices = np.asarray(vertices, float).reshape(1, 3, 2)
    ref = vector_reference_element(kind, degree)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((trials, ref.dim))
    terms = inner_approximation_terms(kind, degree, np.repeat(vertices, trials, 0), c, proj_degree)
    sampled = terms.lhs / (terms.rhs + 1e-300)
    sampled_max = float(sampled.max()) if trials else 0.0

    # Divergence is a polynomial; sample it to find the divergence-free subspace.
    quad = triangle_rule()
    J, det = triangle_jacobians(vertices)
    _, divs = piola_basis(ref, J, det, quad.ref_points)
    kernel = scipy.linalg.null_space(divs[0])
    witness, w_lhs, w_rhs = None, 0.0, 0.0
    if kernel.size:
        kt = kernel.T
        kterms = inner_approximation_terms(kind, degree, np.repeat(vertices, len(kt), 0), kt, proj_degree)
        i = int(np.argmax(kterms.lhs))
        scale = np.sqrt(det[0] / 2.0)  # ||tau|| scale of unit coefficients
        if kterms.lhs[i] > 1e-10 * scale and kterms.rhs[i] <= 1e-14:
            witness, w_lhs, w_rhs = kt[i], float(kterms.lhs[i]), float(kterms.rhs[i])
        else:
            w_lhs, w_rhs = float(kterms.lhs[i]), float(kterms.rhs[i])
    best = np.inf if witness is not None else sampled_max
    return CounterexampleResult(
        best_ratio=best,
        witness_found=witness is not None or sampled_max > 1.0,
        witness_coeffs=witness,
        witness_lhs=w_lhs,
        witness_rhs=w_rhs,
        sampled_max_ratio=sampled_max,
    )


def discrete_dual_check(system: AssembledSystem, x_h: np.ndarray, beta_h: float | None = None):
    """Solve B^T y = M_H x and return (y, ||y||_H * beta_h).

    The second value is at most 1 when x has unit H-norm.
    """
    if beta_h is None:
        beta_h = compute_inf_sup(system).beta_h
    y = _lu_solve(system.B.T, system.M_H @ x_h, "transposed mixed matrix")
    return y, system.h_norm(y) * beta_h


def divergence_nonuniformity(mesh, k: int, frequencies) -> np.ndarray:
    """||(1 - Pi_k) div p|| / ||g|| for p = grad phi, -Laplace phi = g.

    With g = sin(N pi x) sin(N pi y) the solution is known in closed form
    and div p = -g, so the ratio is ||(1 - Pi_k) g|| / ||g||.
    """
    quad = triangle_rule()
    w = _weights(mesh, quad)
    out = []
    for N in frequencies:
        g = _sample_any(lambda x: np.sin(N * np.pi * x[..., 0]) * np.sin(N * np.pi * x[..., 1]), mesh, quad)
        out.append(_l2(w, projection_residual(-g, mesh, k, quad)) / _l2(w, g))
    return np.array(out)
