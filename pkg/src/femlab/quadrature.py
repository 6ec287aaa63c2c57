"""Quadrature rules on the reference triangle and on line segments."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Symmetric 12-point rule of polynomial degree 6 (Dunavant), orbit parameters
# re-solved from the moment equations to full double precision.
_DEG6_CENTROIDAL = (
    (0.11678627572637936603, 0.50142650965817915742),
    (0.050844906370206816921, 0.87382197101699554332),
)
_DEG6_GENERAL = (0.082851075618373575194, 0.053145049844816947353, 0.31035245103378440542)


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Rule on the reference triangle (0,0), (1,0), (0,1).

    ``points`` holds barycentric coordinates; ``weights`` sum to the
    reference area 1/2.
    """

    points: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,)
    exactness_degree: int

    @property
    def ref_points(self) -> np.ndarray:
        """Cartesian reference coordinates, shape (nq, 2)."""
        return self.points[:, 1:]

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 6) -> Quadrature:
    """Symmetric triangle rule exact for polynomials up to ``degree`` (<= 6)."""
    if degree == 1:
        pts = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
        exact = 1
    elif 2 <= degree <= 6:
        pts, w = [], []
        for wt, a in _DEG6_CENTROIDAL:
            b = 0.5 * (1.0 - a)
            for p in ((a, b, b), (b, a, b), (b, b, a)):
                pts.append(p)
                w.append(wt)
        wt, a, b = _DEG6_GENERAL
        c = 1.0 - a - b
        for p in itertools.permutations((a, b, c)):
            pts.append(p)
            w.append(wt)
        pts, w = np.array(pts), np.array(w)
        exact = 6
    else:
        raise ValueError(f"no triangle rule of degree {degree}")
    for arr in (pts, w):
        arr.flags.writeable = False
    q = Quadrature(points=pts, weights=0.5 * w, exactness_degree=exact)
    q.weights.flags.writeable = False
    return q


@lru_cache(maxsize=None)
def gauss_legendre_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def monomial_integral(i: int, j: int) -> float:
    """Exact integral of x**i * y**j over the reference triangle."""
    from math import factorial

    return factorial(i) * factorial(j) / factorial(i + j + 2)
