"""Quadrature on the reference triangle and on the unit interval.

The reference triangle has vertices (0, 0), (1, 0), (0, 1). Triangle rules
are collapsed (Stroud conical) products of Gauss-Jacobi and Gauss-Legendre
rules, so any exactness degree is available with positive weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,), sum to 1/2
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return np.stack([1.0 - x - y, x, y], axis=1)

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def _triangle_rule(degree: int) -> QuadRule:
    n = max(1, (degree + 2) // 2)
    # u-direction carries the collapse Jacobian (1 - u)
    tu, wu = roots_jacobi(n, 1.0, 0.0)
    tv, wv = roots_legendre(n)
    u = 0.5 * (tu + 1.0)
    v = 0.5 * (tv + 1.0)
    wu = wu / 4.0
    wv = wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U
    y = V * (1.0 - U)
    w = np.outer(wu, wv)
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    pts.setflags(write=False)
    w = w.ravel()
    w.setflags(write=False)
    return QuadRule(pts, w, degree)


def quad_rule(degree: int) -> QuadRule:
    """Triangle rule integrating every polynomial of total degree <= `degree`."""
    if degree < 0:
        raise ValueError("exactness degree must be nonnegative")
    return _triangle_rule(int(degree))


@lru_cache(maxsize=None)
def gauss_line(npoints: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    t, w = roots_legendre(npoints)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w
