import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from femlab.errors import SpaceError
from femlab.fe_spaces import (
    dg_space,
    evaluate_basis,
    evaluate_dg,
    flux_distance,
    flux_space,
    interpolate_best_flux,
    l2_project_Pk,
    piola_basis,
    shifted_legendre,
    triangle_jacobians,
    vector_reference_element,
)
from femlab.analysis import fit_slope, projection_residual
from femlab.mesh import _LOCAL_EDGES, Triangulation, build_structured_mesh, refine_uniform
from femlab.quadrature import gauss_legendre_unit, triangle_rule

SPACES = [("RT", 0), ("RT", 1), ("BDM", 1)]


def edge_moments(vertices, vals_fn, n_moments):
    """Physical edge-normal moments against shifted Legendre polynomials."""
    t, w = gauss_legendre_unit(5)
    rows = []
    for a, b in _LOCAL_EDGES:
        d = vertices[b] - vertices[a]
        n = np.array([d[1], -d[0]]) / np.hypot(*d)
        vals = vals_fn(REF[a] + t[:, None] * (REF[b] - REF[a]))  # (npts, nloc, 2)
        for j in range(n_moments):
            rows.append((w * shifted_legendre(j, t) * np.hypot(*d)) @ (vals @ n))
    return np.array(rows)


REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("kind, degree, dim", [("RT", 0, 3), ("RT", 1, 8), ("BDM", 1, 6)])
def test_local_dimensions(kind, degree, dim):
    assert vector_reference_element(kind, degree).dim == dim
    mesh = build_structured_mesh(2)
    assert flux_space(mesh, kind, degree).local_dim == dim


@pytest.mark.parametrize("k", [0, 1])
def test_dg_dimensions(k):
    mesh = build_structured_mesh(2)
    Q = dg_space(mesh, k)
    assert Q.local_dim == (k + 1) * (k + 2) // 2
    assert Q.n_dofs == mesh.n_triangles * Q.local_dim


def test_unsupported_spaces():
    with pytest.raises(SpaceError):
        vector_reference_element("RT", 2)
    with pytest.raises(SpaceError):
        vector_reference_element("BDM", 0)
    with pytest.raises(SpaceError):
        vector_reference_element("N1", 0)


def test_rt0_reference_shape_functions():
    # integral moment of (x - p_i) . n over edge i is 2|T| = 1
    ref = vector_reference_element("RT", 0)
    x = triangle_rule().ref_points
    vals = ref.values(x)
    for i in range(3):
        np.testing.assert_allclose(vals[:, i], x - REF[i], atol=1e-14)
    np.testing.assert_allclose(ref.divergence(x), 2.0, atol=1e-13)


@pytest.mark.parametrize("kind, degree", SPACES)
def test_reference_basis_is_dual_to_dofs(kind, degree):
    ref = vector_reference_element(kind, degree)
    D = edge_moments(REF, ref.values, ref.n_edge_moments)
    n_edge = 3 * ref.n_edge_moments
    np.testing.assert_allclose(D, np.eye(ref.dim)[:n_edge], atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=6, max_size=6),
    st.sampled_from(SPACES),
)
def test_piola_preserves_edge_moments(coords, space):
    v = np.array(coords).reshape(3, 2)
    J, det = triangle_jacobians(v[None])
    if det[0] < 1e-2:
        v = v[[0, 2, 1]]
        J, det = triangle_jacobians(v[None])
    if det[0] < 1e-2:
        return
    kind, degree = space
    ref = vector_reference_element(kind, degree)
    D = edge_moments(v, lambda x: piola_basis(ref, J, det, x)[0][0], ref.n_edge_moments)
    np.testing.assert_allclose(D, np.eye(ref.dim)[: 3 * ref.n_edge_moments], atol=1e-11)


def test_degenerate_jacobian_raises():
    ref = vector_reference_element("RT", 0)
    J, det = triangle_jacobians(np.array([[[0, 0], [1, 0], [2, 0]]], float))
    with pytest.raises(SpaceError):
        piola_basis(ref, J, det, np.zeros((1, 2)))


def _edge_ref_points(mesh, t, e, phys):
    """Reference coordinates of physical points on element t."""
    v = mesh.vertices[mesh.triangles[t]]
    J = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
    return np.linalg.solve(J, (phys - v[0]).T).T


@pytest.mark.parametrize("kind, degree", SPACES)
def test_normal_continuity(kind, degree):
    mesh = refine_uniform(build_structured_mesh(1))
    V = flux_space(mesh, kind, degree)
    t_pts, _ = gauss_legendre_unit(4)
    for e in np.flatnonzero(~mesh.boundary_edge_flags):
        a, b = mesh.vertices[mesh.edges[e]]
        phys = a + t_pts[:, None] * (b - a)
        n = mesh.edge_normals[e]
        sides = []
        for t in mesh.edge_to_triangles[e]:
            vals, _ = evaluate_basis(V, int(t), _edge_ref_points(mesh, t, e, phys))
            normal = np.zeros((len(phys), V.n_dofs))
            np.add.at(normal.T, V.dof_map[t], (vals @ n).T)
            sides.append(normal)
        np.testing.assert_allclose(sides[0], sides[1], atol=1e-12)


@pytest.mark.parametrize("kind, degree", SPACES)
def test_divergence_in_range(kind, degree):
    mesh = build_structured_mesh(2)
    V = flux_space(mesh, kind, degree)
    quad = triangle_rule()
    _, divs = evaluate_basis(V, None, quad.ref_points)
    k = degree if kind == "RT" else degree - 1
    for a in range(V.local_dim):
        r = projection_residual(divs[:, :, a], mesh, k, quad)
        assert np.abs(r).max() <= 1e-11 * max(1.0, np.abs(divs).max())


def test_dg_p0_is_indicator():
    mesh = build_structured_mesh(2)
    vals = evaluate_basis(dg_space(mesh, 0), None, triangle_rule().ref_points)
    np.testing.assert_array_equal(vals, 1.0)


def test_evaluate_basis_index_error():
    V = flux_space(build_structured_mesh(1), "RT", 0)
    with pytest.raises(IndexError):
        evaluate_basis(V, 5, np.zeros((1, 2)))


@pytest.mark.parametrize("k", [0, 1])
def test_projection_fixes_constants(ref_mesh, k):
    c = l2_project_Pk(3.5, ref_mesh, k)
    np.testing.assert_allclose(evaluate_dg(c, k, triangle_rule().ref_points), 3.5, atol=1e-13)


def test_projection_mean_of_x1(ref_mesh):
    c = l2_project_Pk(lambda x: x[..., 0], ref_mesh, 0)
    assert c[0, 0] == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("k", [0, 1])
def test_projection_orthogonality(k):
    mesh = build_structured_mesh(2)
    quad = triangle_rule()
    f = lambda x: np.exp(x[..., 0]) * np.cos(3 * x[..., 1])  # noqa: E731
    fv = f(_phys(mesh, quad))
    r = projection_residual(fv, mesh, k, quad)
    from femlab.fe_spaces import _weights, scalar_reference_values

    phi = scalar_reference_values(k, quad.ref_points)
    w = _weights(mesh, quad)
    inner = np.einsum("tq,tq,qa->ta", w, r, phi)
    norm_f = np.sqrt(np.einsum("tq,tq->t", w, fv**2))
    norm_q = np.sqrt(np.einsum("tq,qa->ta", w, phi**2))
    assert np.all(np.abs(inner) <= 1e-12 * norm_f[:, None] * norm_q)


def _phys(mesh, quad):
    from femlab.coefficients import physical_points

    return physical_points(mesh, quad.ref_points)


def test_vector_projection_shape():
    mesh = build_structured_mesh(2)
    c = l2_project_Pk(lambda x: x, mesh, 1)
    assert c.shape == (mesh.n_triangles, 3, 2)


@pytest.mark.parametrize("kind, degree", SPACES)
def test_best_flux_recovers_space_member(kind, degree, rng):
    mesh = build_structured_mesh(2)
    V = flux_space(mesh, kind, degree)
    x = rng.standard_normal(V.n_dofs)
    from femlab.fe_spaces import evaluate_flux

    vals, _ = evaluate_flux(V, x)
    back = interpolate_best_flux(vals, V)
    assert np.linalg.norm(back - x) <= 1e-12 * np.linalg.norm(x)


def _grad_sine(x):
    pi = np.pi
    return pi * np.stack(
        [np.cos(pi * x[..., 0]) * np.sin(pi * x[..., 1]), np.sin(pi * x[..., 0]) * np.cos(pi * x[..., 1])],
        axis=-1,
    )


def test_best_flux_rate_rt0():
    meshes = [build_structured_mesh(m) for m in (2, 4, 8)]
    d = [flux_distance(_grad_sine, flux_space(m, "RT", 0)) for m in meshes]
    assert np.all(np.diff(d) < 0)
    assert fit_slope([m.h_max for m in meshes], d) == pytest.approx(1.0, abs=0.15)


def test_best_flux_weight_scaling():
    V = flux_space(build_structured_mesh(2), "RT", 0)
    d1 = flux_distance(_grad_sine, V, A=np.eye(2))
    d2 = flux_distance(_grad_sine, V, A=2 * np.eye(2))
    assert d2 == pytest.approx(d1 / np.sqrt(2), rel=1e-12)
