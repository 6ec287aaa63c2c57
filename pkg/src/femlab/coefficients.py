"""PDE data (A, b, gamma) and the ellipticity diagnostics.

Fields are sampled at physical quadrature points.  Rough data is realised
as mesh-aligned piecewise constants: a ``piecewise`` field is a function of
the element centroid, so it is exactly constant on every element.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import CoefficientError
from .mesh import Triangulation
from .quadrature import Quadrature, triangle_rule


def physical_points(mesh: Triangulation, ref_points: np.ndarray) -> np.ndarray:
    """Map reference points (npts, 2) to every element, shape (nt, npts, 2)."""
    J, _ = mesh.jacobians()
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    return p0[:, None, :] + np.einsum("tij,qj->tqi", J, ref_points)


@dataclass(frozen=True)
class Field:
    """Scalar, vector or 2x2-matrix valued coefficient field.

    ``kind`` is one of

    * ``"constant"``: ``value`` is the array itself;
    * ``"piecewise"``: ``value`` maps centroids (n, 2) to values (n, *shape);
    * ``"elementwise"``: ``value`` is an array (nt, *shape) for one mesh;
    * ``"smooth"``: ``value`` maps points (..., 2) to values (..., *shape).
    """

    kind: str
    value: object
    shape: tuple[int, ...]

    def evaluate(self, mesh: Triangulation, quad: Quadrature | None = None) -> np.ndarray:
        quad = quad or triangle_rule()
        nt, nq = mesh.n_triangles, len(quad)
        if self.kind == "constant":
            v = np.asarray(self.value, dtype=float)
            return np.broadcast_to(v, (nt, nq) + self.shape).copy()
        if self.kind == "piecewise":
            v = np.asarray(self.value(mesh.centroids), dtype=float).reshape((nt,) + self.shape)
            return np.repeat(v[:, None], nq, axis=1)
        if self.kind == "elementwise":
            v = np.asarray(self.value, dtype=float)
            if v.shape != (nt,) + self.shape:
                raise CoefficientError(
                    f"elementwise field has shape {v.shape}, mesh needs {(nt,) + self.shape}"
                )
            return np.repeat(v[:, None], nq, axis=1)
        if self.kind == "smooth":
            x = physical_points(mesh, quad.ref_points)
            v = np.asarray(self.value(x), dtype=float)
            return np.broadcast_to(v, (nt, nq) + self.shape).copy()
        raise ValueError(f"unknown field kind {self.kind!r}")

    def at_points(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at arbitrary points; only for constant and smooth fields."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.value, float), x.shape[:-1] + self.shape)
        if self.kind == "smooth":
            return np.broadcast_to(np.asarray(self.value(x), float), x.shape[:-1] + self.shape)
        raise CoefficientError(f"{self.kind} field cannot be evaluated at arbitrary points")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"


def as_field(value, shape: tuple[int, ...]) -> Field:
    """Coerce a number, array, callable or :class:`Field` to a :class:`Field`."""
    if isinstance(value, Field):
        if value.shape != shape:
            raise CoefficientError(f"field shape {value.shape} != expected {shape}")
        return value
    if callable(value):
        return Field("smooth", value, shape)
    arr = np.asarray(value, dtype=float)
    if shape == (2, 2) and arr.ndim == 0:
        arr = arr * np.eye(2)
    if arr.shape != shape:
        raise CoefficientError(f"constant of shape {arr.shape} does not match {shape}")
    return Field("constant", arr, shape)


def piecewise(func: Callable[[np.ndarray], np.ndarray], shape: tuple[int, ...]) -> Field:
    return Field("piecewise", func, shape)


def checkerboard(v1: float, v2: float, blocks: int) -> Field:
    """Scaled identity alternating between ``v1`` and ``v2`` on a blocks x blocks grid."""

    def value(c):
        ij = np.floor(np.clip(c, 0.0, 1.0 - 1e-14) * blocks).astype(int)
        s = np.where((ij[:, 0] + ij[:, 1]) % 2 == 0, v1, v2)
        return s[:, None, None] * np.eye(2)

    return Field("piecewise", value, (2, 2))


class Formulation(str, Enum):
    CONSERVATIVE = "conservative"
    DIVERGENCE = "divergence"
    GENERAL = "general"


@dataclass(frozen=True)
class CoefficientSet:
    """Diffusion ``A``, convection ``b`` and reaction ``gamma``.

    The mixed form couples convection through ``b1`` (test flux) and ``b2``
    (test scalar):  conservative form uses ``b1 = A^-1 b, b2 = 0``,
    divergence form ``b1 = 0, b2 = A^-1 b``; ``general`` takes explicit
    ``b1``/``b2`` fields.
    """

    A: Field
    b: Field
    gamma: Field
    formulation: Formulation = Formulation.CONSERVATIVE
    b1: Field | None = None
    b2: Field | None = None

    @classmethod
    def create(cls, A=1.0, b=(0.0, 0.0), gamma=0.0, formulation="conservative", b1=None, b2=None):
        formulation = Formulation(formulation)
        if formulation is Formulation.GENERAL:
            if b1 is None or b2 is None:
                raise CoefficientError("general formulation needs explicit b1 and b2")
            b1, b2 = as_field(b1, (2,)), as_field(b2, (2,))
        elif b1 is not None or b2 is not None:
            raise CoefficientError("b1/b2 may only be given for the general formulation")
        return cls(as_field(A, (2, 2)), as_field(b, (2,)), as_field(gamma, ()), formulation, b1, b2)

    def with_formulation(self, formulation) -> "CoefficientSet":
        return CoefficientSet(self.A, self.b, self.gamma, Formulation(formulation))

    def sample(self, mesh: Triangulation, quad: Quadrature | None = None) -> "SampledCoefficients":
        quad = quad or triangle_rule()
        A = self.A.evaluate(mesh, quad)
        b = self.b.evaluate(mesh, quad)
        gamma = self.gamma.evaluate(mesh, quad)
        Ainv = np.linalg.inv(A)
        if self.formulation is Formulation.GENERAL:
            b1 = self.b1.evaluate(mesh, quad)
            b2 = self.b2.evaluate(mesh, quad)
        else:
            Ainv_b = np.einsum("tqij,tqj->tqi", Ainv, b)
            zero = np.zeros_like(b)
            if self.formulation is Formulation.CONSERVATIVE:
                b1, b2 = Ainv_b, zero
            else:
                b1, b2 = zero, Ainv_b
        return SampledCoefficients(A=A, Ainv=Ainv, b=b, gamma=gamma, b1=b1, b2=b2)


@dataclass(frozen=True, eq=False)
class SampledCoefficients:
    """Coefficient values at quadrature points, arrays shaped (nt, nq, ...)."""

    A: np.ndarray
    Ainv: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    b1: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class AssumptionADiagnostics:
    alpha_lo: float
    alpha_hi: float
    b_sup: float
    gamma_sup: float
    max_asymmetry: float
    ok: bool
    offending_element: int | None = None


def validate_assumption_A(
    coeffs: CoefficientSet,
    mesh: Triangulation,
    quad: Quadrature | None = None,
    raise_on_failure: bool = True,
) -> AssumptionADiagnostics:
    """Sample eigenvalue bounds of A and sup-norms of b and gamma.

    Fails if A is not symmetric to 1e-12 or has a non-positive sampled
    eigenvalue somewhere; the first offending element is reported.
    """
    quad = quad or triangle_rule()
    A = coeffs.A.evaluate(mesh, quad)
    b = coeffs.b.evaluate(mesh, quad)
    gamma = coeffs.gamma.evaluate(mesh, quad)

    asym = np.abs(A - np.swapaxes(A, -1, -2)).max(axis=(-1, -2))
    eig = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    lo = eig[..., 0]
    bad = (lo <= 0.0) | (asym > 1e-12)
    offending = int(np.argwhere(bad)[0, 0]) if bad.any() else None
    diag = AssumptionADiagnostics(
        alpha_lo=float(lo.min()),
        alpha_hi=float(eig[..., -1].max()),
        b_sup=float(np.linalg.norm(b, axis=-1).max()),
        gamma_sup=float(np.abs(gamma).max()),
        max_asymmetry=float(asym.max()),
        ok=offending is None,
        offending_element=offending,
    )
    if raise_on_failure and not diag.ok:
        raise CoefficientError(
            f"A is not symmetric positive definite on element {offending} "
            f"(min eigenvalue {diag.alpha_lo:.6g}, asymmetry {diag.max_asymmetry:.3e})",
            element=offending,
        )
    return diag


def coefficient_bound_M1(
    coeffs: CoefficientSet, mesh: Triangulation, quad: Quadrature | None = None
) -> float:
    """sqrt of the sampled supremum of |A^{-1/2} b|^2 + |gamma - 1|^2 + 1."""
    quad = quad or triangle_rule()
    s = coeffs.sample(mesh, quad)
    bAb = np.einsum("tqi,tqij,tqj->tq", s.b, s.Ainv, s.b)
    return float(np.sqrt((bAb + (s.gamma - 1.0) ** 2 + 1.0).max()))


def presets(name: str) -> CoefficientSet:
    """Named coefficient sets used by the acceptance campaigns."""
    if name == "laplace":
        return CoefficientSet.create()
    if name == "indefinite":
        return CoefficientSet.create(A=1.0, b=(1.0, 1.0), gamma=-10.0, formulation="divergence")
    if name == "checkerboard":
        return CoefficientSet.create(A=checkerboard(1.0, 100.0, 2), b=(1.0, 1.0), gamma=-10.0)
    raise KeyError(f"unknown coefficient preset {name!r}")
