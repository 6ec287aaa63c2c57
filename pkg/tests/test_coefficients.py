import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from femlab.coefficients import (
    CoefficientSet,
    Formulation,
    as_field,
    checkerboard,
    coefficient_bound_M1,
    presets,
    validate_assumption_A,
)
from femlab.errors import CoefficientError
from femlab.mesh import build_structured_mesh


@pytest.fixture
def mesh():
    return build_structured_mesh(4)


def test_identity_bounds(mesh):
    d = validate_assumption_A(CoefficientSet.create(), mesh)
    assert (d.alpha_lo, d.alpha_hi) == (1.0, 1.0)
    assert d.ok


def test_checkerboard_bounds(mesh):
    d = validate_assumption_A(CoefficientSet.create(A=checkerboard(1.0, 100.0, 2)), mesh)
    assert d.alpha_lo == pytest.approx(1.0)
    assert d.alpha_hi == pytest.approx(100.0)


def test_checkerboard_pattern(mesh):
    A = checkerboard(1.0, 100.0, 2).evaluate(mesh)
    c = mesh.centroids
    lower_left = (c[:, 0] < 0.5) & (c[:, 1] < 0.5)
    upper_left = (c[:, 0] < 0.5) & (c[:, 1] > 0.5)
    assert np.all(A[lower_left][..., 0, 0] == A[lower_left][0, 0, 0, 0])
    assert A[lower_left][0, 0, 0, 0] != A[upper_left][0, 0, 0, 0]


def test_indefinite_matrix_rejected(mesh):
    c = CoefficientSet.create(A=np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(CoefficientError) as info:
        validate_assumption_A(c, mesh)
    assert info.value.element == 0
    d = validate_assumption_A(c, mesh, raise_on_failure=False)
    assert d.alpha_lo == pytest.approx(-1.0)
    assert d.alpha_hi == pytest.approx(3.0)
    assert not d.ok


def test_nonsymmetric_rejected(mesh):
    c = CoefficientSet.create(A=np.array([[2.0, 0.5], [0.0, 2.0]]))
    assert not validate_assumption_A(c, mesh, raise_on_failure=False).ok


@pytest.mark.parametrize(
    "A, b, gamma, expected",
    [
        (1.0, (0.0, 0.0), 1.0, 1.0),
        (1.0, (1.0, 0.0), 0.0, np.sqrt(3.0)),
        (4.0, (2.0, 0.0), 1.0, np.sqrt(2.0)),
    ],
)
def test_m1_examples(mesh, A, b, gamma, expected):
    c = CoefficientSet.create(A=A, b=b, gamma=gamma)
    assert coefficient_bound_M1(c, mesh) == pytest.approx(expected, rel=1e-14)


def test_formulations_store_b1_b2(mesh):
    A = np.diag([2.0, 4.0])
    b = (1.0, 1.0)
    cons = CoefficientSet.create(A=A, b=b).sample(mesh)
    div = CoefficientSet.create(A=A, b=b, formulation="divergence").sample(mesh)
    expected = np.broadcast_to([0.5, 0.25], cons.b1.shape)
    np.testing.assert_allclose(cons.b1, expected)
    np.testing.assert_array_equal(cons.b2, 0.0)
    np.testing.assert_allclose(div.b2, expected)
    np.testing.assert_array_equal(div.b1, 0.0)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-0.9, 0.9),
    st.floats(-5, 5), st.floats(-5, 5),
)
def test_formulation_swap_property(l1, l2, rho, bx, by):
    off = rho * np.sqrt(l1 * l2)
    A = np.array([[l1, off], [off, l2]])
    mesh = build_structured_mesh(1)
    c = CoefficientSet.create(A=A, b=(bx, by))
    cons = c.sample(mesh)
    div = c.with_formulation("divergence").sample(mesh)
    np.testing.assert_allclose(cons.b1, div.b2, rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(np.einsum("...ij,...j->...i", A, cons.b1), cons.b, rtol=1e-10, atol=1e-12)


def test_smooth_field_values(mesh):
    g = as_field(lambda x: 1.0 + x[..., 0], ())
    vals = g.evaluate(mesh)
    assert vals.min() >= 1.0 and vals.max() <= 2.0
    assert not g.is_constant


def test_presets():
    ind = presets("indefinite")
    assert ind.formulation is Formulation.DIVERGENCE
    assert float(ind.gamma.value) == -10.0
    with pytest.raises(KeyError):
        presets("nope")
