"""Scalar P_p and Raviart-Thomas-Nedelec RTN_p bases, fields and projectors.

Scalar fields use a basis orthonormal on the reference triangle, so the
physical elementwise mass matrix is ``detJ * I``. RTN fields use the
contravariant Piola map ``v = J vhat / detJ`` and a reference basis dual to
the moments

* ``int_F v.n L_k ds`` on each local face (``L_k`` shifted Legendre
  polynomials in the face parameter), ``k = 0..p``;
* ``int_K v_c phi_m dx`` against the scalar basis of P_{p-1}.

Face moments are invariant under the Piola map, hence the coefficient of an
RTN field *is* its physical face moment, and the normal trace on a face
depends only on that face's coefficients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import eval_jacobi

from .mesh import LOCAL_FACES, REF_VERTICES, Mesh
from .quadrature import QuadRule, gauss_line, quad_rule

MAX_SCALAR_DEGREE = 12
MAX_RTN_DEGREE = 8


def dim_p(p: int) -> int:
    return (p + 1) * (p + 2) // 2 if p >= 0 else 0


def dim_rtn(p: int) -> int:
    return (p + 1) * (p + 3)


def _graded_pairs(deg):
    return [(t - j, j) for t in range(deg + 1) for j in range(t + 1)]


def _scaled_legendre(a, b, da, db, deg):
    """Q_i = b^i P_i(a / b) and gradients, via the three-term recurrence."""
    Q = [np.ones_like(a), a]
    dQ = [np.zeros_like(da), da]
    for n in range(1, deg):
        Q.append(((2 * n + 1) * a * Q[n] - n * b * b * Q[n - 1]) / (n + 1))
        dQ.append(
            (
                (2 * n + 1) * (da * Q[n][..., None] + a[..., None] * dQ[n])
                - n * (2 * b[..., None] * db * Q[n - 1][..., None] + (b * b)[..., None] * dQ[n - 1])
            )
            / (n + 1)
        )
    return Q[: deg + 1], dQ[: deg + 1]


def _jacobi(n, alpha, z):
    """P_n^(alpha, 0)(z) and its derivative."""
    val = eval_jacobi(n, alpha, 0.0, z)
    der = 0.5 * (n + alpha + 1) * eval_jacobi(n - 1, alpha + 1, 1.0, z) if n > 0 else np.zeros_like(z)
    return val, der


def _dubiner_raw(deg, pts):
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    a, b = 2.0 * x + y - 1.0, 1.0 - y
    ones = np.ones(pts.shape[:-1] + (1,))
    da = ones * np.array([2.0, 1.0])
    db = ones * np.array([0.0, -1.0])
    Q, dQ = _scaled_legendre(a, b, da, db, deg)
    z = 2.0 * y - 1.0
    vals, grads = [], []
    for i, j in _graded_pairs(deg):
        J, dJ = _jacobi(j, 2 * i + 1, z)
        vals.append(Q[i] * J)
        g = dQ[i] * J[..., None]
        g[..., 1] += 2.0 * Q[i] * dJ
        grads.append(g)
    return np.stack(vals, axis=-1), np.stack(grads, axis=-2)


@lru_cache(maxsize=None)
def _dubiner_scales(deg: int) -> np.ndarray:
    q = quad_rule(2 * deg)
    V, _ = _dubiner_raw(deg, q.points)
    s = 1.0 / np.sqrt(q.weights @ V**2)
    s.setflags(write=False)
    return s


def dubiner(deg: int, pts) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (Dubiner) basis of P_deg on the reference triangle.

    Graded by total degree, so the first dim P_q functions span P_q.
    Returns values (..., n) and gradients (..., n, 2).
    """
    V, G = _dubiner_raw(deg, pts)
    s = _dubiner_scales(deg)
    return V * s, G * s[:, None]


@dataclass(frozen=True)
class ScalarBasis:
    """Orthonormal basis of P_p on the reference triangle (hierarchical in p)."""

    degree: int

    @property
    def dim(self) -> int:
        return dim_p(self.degree)

    def eval(self, xhat) -> tuple[np.ndarray, np.ndarray]:
        """Values (..., n) and reference gradients (..., n, 2)."""
        if not 0 <= self.degree <= MAX_SCALAR_DEGREE:
            raise ValueError(f"scalar degree must lie in [0, {MAX_SCALAR_DEGREE}]")
        return dubiner(self.degree, xhat)

    def values(self, xhat) -> np.ndarray:
        return self.eval(xhat)[0]


def scalar_basis(p: int) -> ScalarBasis:
    return ScalarBasis(int(p))


# -- RTN reference basis ------------------------------------------------------------

def _rtn_span(p, pts):
    """Spanning set of RTN_p: P_p^2 plus x * (degree-p part of P_p). Values and divergence."""
    pts = np.asarray(pts, dtype=float)
    V, G = dubiner(p, pts)
    zeros = np.zeros_like(V)
    vx = np.stack([V, zeros], axis=-1)
    vy = np.stack([zeros, V], axis=-1)
    top = slice(dim_p(p - 1), dim_p(p))
    h, gh = V[..., top], G[..., top, :]
    vh = pts[..., None, :] * h[..., None]
    div_h = 2.0 * h + np.einsum("...c,...jc->...j", pts, gh)
    vals = np.concatenate([vx, vy, vh], axis=-2)
    div = np.concatenate([G[..., 0], G[..., 1], div_h], axis=-1)
    return vals, div


# reference face endpoints (start, end) for local face i
_REF_FACE_START = REF_VERTICES[LOCAL_FACES[:, 0]]
_REF_FACE_END = REF_VERTICES[LOCAL_FACES[:, 1]]


def _face_points(i: int, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return _REF_FACE_START[i] + t[:, None] * (_REF_FACE_END[i] - _REF_FACE_START[i])


def _face_scaled_normal(i: int) -> np.ndarray:
    d = _REF_FACE_END[i] - _REF_FACE_START[i]
    return np.array([d[1], -d[0]])  # |F| * outward unit normal


def shifted_legendre(k_max: int, t) -> np.ndarray:
    """L_k(t) = P_k(2t - 1) for k = 0..k_max -> (..., k_max+1)."""
    return npleg.legvander(2.0 * np.asarray(t, dtype=float) - 1.0, k_max)


@dataclass(frozen=True)
class RTNTables:
    degree: int
    coeffs: np.ndarray  # (nR, ns): basis_j = sum_s coeffs[j, s] span_s
    R: np.ndarray  # (2, 2, nR, nR) reference mass tensor
    D: np.ndarray  # (nP, nR) int phi_i div psi_j over the reference element
    rule: QuadRule

    @property
    def dim(self) -> int:
        return dim_rtn(self.degree)

    @property
    def n_face_dofs(self) -> int:
        return self.degree + 1

    def face_dofs(self, i: int) -> np.ndarray:
        n = self.degree + 1
        return np.arange(i * n, (i + 1) * n)

    @property
    def interior_dofs(self) -> np.ndarray:
        return np.arange(3 * (self.degree + 1), self.dim)

    def eval(self, xhat) -> tuple[np.ndarray, np.ndarray]:
        """Reference values (..., nR, 2) and divergence (..., nR)."""
        S, dS = _rtn_span(self.degree, xhat)
        return np.einsum("js,...sc->...jc", self.coeffs, S), dS @ self.coeffs.T


@lru_cache(maxsize=None)
def rtn_tables(p: int) -> RTNTables:
    if not 0 <= p <= MAX_RTN_DEGREE:
        raise ValueError(f"RTN degree must lie in [0, {MAX_RTN_DEGREE}]")
    n_int = dim_p(p - 1)
    t, wt = gauss_line(p + 2)
    L = shifted_legendre(p, t)  # (nt, p+1)
    rows = []
    for i in range(3):
        S, _ = _rtn_span(p, _face_points(i, t))
        flux = S @ _face_scaled_normal(i)  # (nt, ns)
        rows.append(np.einsum("t,tk,ts->ks", wt, L, flux))
    if n_int:
        q = quad_rule(2 * p)
        S, _ = _rtn_span(p, q.points)
        phi = scalar_basis(p - 1).values(q.points)
        for c in range(2):
            rows.append(np.einsum("q,qm,qs->ms", q.weights, phi, S[..., c]))
    V = np.vstack(rows)
    if V.shape[0] != V.shape[1]:
        raise AssertionError("RTN moment count does not match the span dimension")
    C = np.linalg.inv(V).T
    C = C + (np.eye(len(C)) - C @ V.T) @ C
    rule = quad_rule(2 * p + 2)
    tables = RTNTables(p, C, np.zeros(0), np.zeros(0), rule)
    psi, div = tables.eval(rule.points)
    R = np.einsum("q,qia,qjb->abij", rule.weights, psi, psi)
    phi = scalar_basis(p).values(rule.points)
    D = np.einsum("q,qi,qj->ij", rule.weights, phi, div)
    for a in (C, R, D):
        a.setflags(write=False)
    return RTNTables(p, C, R, D, rule)


def face_dof_signs(mesh: Mesh, p: int) -> np.ndarray:
    """Sign relating element-local face moments to globally oriented ones.

    local = sign * global; faces traversed against the global orientation
    flip the normal and reverse the Legendre parameter: sign = -(-1)^k.
    """
    k = np.arange(p + 1)
    rev = -((-1.0) ** k)
    s = np.where(mesh.face_orientation[:, :, None] > 0, 1.0, rev[None, None, :])
    out = np.ones((mesh.n_elements, dim_rtn(p)))
    out[:, : 3 * (p + 1)] = s.reshape(mesh.n_elements, -1)
    return out


def rtn_mass_matrices(mesh: Mesh, p: int, elements=None) -> np.ndarray:
    """Physical RTN mass matrices (n, nR, nR) via the reference tensor."""
    T = rtn_tables(p)
    idx = slice(None) if elements is None else elements
    J, det = mesh.J[idx], mesh.detJ[idx]
    G = np.einsum("kca,kcb->kab", J, J) / det[:, None, None]
    return np.einsum("kab,abij->kij", G, T.R)


# -- fields -----------------------------------------------------------------------

def _elements(mesh, elements):
    return np.arange(mesh.n_elements) if elements is None else np.asarray(elements)


class PiecewisePoly:
    """Broken scalar (or 2-vector) polynomial field of degree ``degree``.

    ``coeffs`` has shape (nK, dim P_p) for scalars, (nK, dim P_p, 2) for
    vector fields (componentwise coefficients).
    """

    def __init__(self, mesh: Mesh, degree: int, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[:2] != (mesh.n_elements, dim_p(degree)) or coeffs.ndim not in (2, 3):
            raise ValueError(f"coefficient shape {coeffs.shape} does not match degree {degree}")
        self.mesh = mesh
        self.degree = int(degree)
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, mesh, degree, vector=False):
        shape = (mesh.n_elements, dim_p(degree)) + ((2,) if vector else ())
        return cls(mesh, degree, np.zeros(shape))

    @property
    def is_vector(self) -> bool:
        return self.coeffs.ndim == 3

    def eval_at(self, elements, xhat):
        phi = scalar_basis(self.degree).values(xhat)
        c = self.coeffs[_elements(self.mesh, elements)]
        if phi.ndim == 2:
            return np.einsum("qi,ki...->kq...", phi, c)
        return np.einsum("kqi,ki...->kq...", phi, c)

    def eval_ref(self, xhat):
        return self.eval_at(None, xhat)

    def norms(self) -> np.ndarray:
        """Elementwise L2 norms."""
        c2 = (self.coeffs ** 2).reshape(self.mesh.n_elements, -1).sum(axis=1)
        return np.sqrt(self.mesh.detJ * c2)

    def norm(self) -> float:
        return float(np.sqrt((self.norms() ** 2).sum()))

    def integrals(self) -> np.ndarray:
        mhat = _scalar_means(self.degree)
        return self.mesh.detJ[:, None] * np.einsum("ki...,i->k...", self.coeffs, mhat).reshape(self.mesh.n_elements, -1)

    def integral(self):
        tot = self.integrals().sum(axis=0)
        return float(tot[0]) if not self.is_vector else tot

    def elevate(self, degree: int) -> "PiecewisePoly":
        if degree < self.degree:
            raise ValueError("cannot elevate to a lower degree")
        c = np.zeros((self.mesh.n_elements, dim_p(degree)) + self.coeffs.shape[2:])
        c[:, : dim_p(self.degree)] = self.coeffs
        return PiecewisePoly(self.mesh, degree, c)

    def _binary(self, other, op):
        if isinstance(other, PiecewisePoly):
            d = max(self.degree, other.degree)
            return PiecewisePoly(self.mesh, d, op(self.elevate(d).coeffs, other.elevate(d).coeffs))
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, s):
        if np.isscalar(s):
            return PiecewisePoly(self.mesh, self.degree, self.coeffs * s)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


@lru_cache(maxsize=None)
def _scalar_means(p):
    q = quad_rule(p)
    m = q.weights @ scalar_basis(p).values(q.points)
    m.setflags(write=False)
    return m


class RTNField:
    """Broken RTN_p field; ``coeffs`` (nK, dim RTN_p) are element-local moments."""

    def __init__(self, mesh: Mesh, degree: int, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (mesh.n_elements, dim_rtn(degree)):
            raise ValueError(f"coefficient shape {coeffs.shape} does not match RTN degree {degree}")
        self.mesh = mesh
        self.degree = int(degree)
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, mesh, degree):
        return cls(mesh, degree, np.zeros((mesh.n_elements, dim_rtn(degree))))

    def eval_at(self, elements, xhat):
        el = _elements(self.mesh, elements)
        psi, _ = rtn_tables(self.degree).eval(xhat)
        c = self.coeffs[el]
        if psi.ndim == 3:
            vhat = np.einsum("qjc,kj->kqc", psi, c)
        else:
            vhat = np.einsum("kqjc,kj->kqc", psi, c)
        return np.einsum("kab,kqb->kqa", self.mesh.J[el], vhat) / self.mesh.detJ[el, None, None]

    def eval_ref(self, xhat):
        return self.eval_at(None, xhat)

    def divergence(self) -> PiecewisePoly:
        return divergence(self)

    def normal_trace(self, face: int, side: int = 0) -> np.ndarray:
        return normal_trace(self, face, side)

    def elevate(self, degree: int) -> "RTNField":
        if degree == self.degree:
            return self
        return project_rtn(self, degree, self.mesh)

    def __add__(self, other):
        if not isinstance(other, RTNField):
            return NotImplemented
        d = max(self.degree, other.degree)
        return RTNField(self.mesh, d, self.elevate(d).coeffs + other.elevate(d).coeffs)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, s):
        if np.isscalar(s):
            return RTNField(self.mesh, self.degree, self.coeffs * s)
        return NotImplemented

    __rmul__ = __mul__


# -- evaluation of arbitrary data -------------------------------------------------------

def field_degree(field):
    """Polynomial degree of a field in reference coordinates, None if unknown."""
    if field is None or np.isscalar(field):
        return 0
    if isinstance(field, np.ndarray) and field.ndim <= 1:
        return 0
    if isinstance(field, RTNField):
        return field.degree + 1
    return getattr(field, "poly_degree", getattr(field, "degree", None) if hasattr(field, "eval_at") else None)


def evaluate(field, mesh: Mesh, xhat, elements=None, vector: bool | None = None) -> np.ndarray:
    """Values of ``field`` at reference points of the given elements.

    ``field`` may be None (zero), a number, a length-2 array (constant
    vector), an object with ``eval_at(elements, xhat)``, or a vectorised
    callable ``f(x, y)`` returning an array or a pair of arrays.
    Returns (n, nq) for scalar and (n, nq, 2) for vector data.
    """
    xhat = np.asarray(xhat, dtype=float)
    n = mesh.n_elements if elements is None else len(elements)
    nq = xhat.shape[-2]
    if field is None:
        return np.zeros((n, nq, 2) if vector else (n, nq))
    if hasattr(field, "eval_at"):
        return field.eval_at(elements, xhat)
    if callable(field):
        X = mesh.map_points(xhat, elements)
        out = field(X[..., 0], X[..., 1])
        if isinstance(out, (tuple, list)):
            out = np.stack(np.broadcast_arrays(*[np.asarray(o, dtype=float) for o in out]), axis=-1)
        out = np.asarray(out, dtype=float)
        if out.ndim == 0:
            return np.full((n, nq), float(out))
        if out.ndim == 1 and out.shape == (2,) and vector:
            return np.broadcast_to(out, (n, nq, 2)).copy()
        return np.broadcast_to(out, (n, nq) + out.shape[2:]).copy()
    arr = np.asarray(field, dtype=float)
    if arr.ndim == 0:
        return np.full((n, nq), float(arr))
    if arr.shape == (2,):
        return np.broadcast_to(arr, (n, nq, 2)).copy()
    raise TypeError(f"cannot evaluate field of type {type(field).__name__}")


def _default_quad_degree(field, p, extra=8):
    d = field_degree(field)
    return p + (d if d is not None else p + extra)


def scalar_coeffs_from_values(values, rule: QuadRule, p: int) -> np.ndarray:
    """Projection coefficients from samples at the points of ``rule``."""
    phi = scalar_basis(p).values(rule.points)
    return np.einsum("q,qi,kq...->ki...", rule.weights, phi, values)


def rtn_coeffs_from_values(values, rule: QuadRule, p: int, mesh: Mesh, elements=None) -> np.ndarray:
    el = _elements(mesh, elements)
    psi, _ = rtn_tables(p).eval(rule.points)
    # int_K v . (J psihat / det) det = sum_q w v^T J psihat
    b = np.einsum("q,kqa,kab,qjb->kj", rule.weights, values, mesh.J[el], psi)
    M = rtn_mass_matrices(mesh, p, el)
    return np.linalg.solve(M, b[..., None])[..., 0]


def project_scalar(field, p: int, mesh: Mesh, quad_degree: int | None = None) -> PiecewisePoly:
    """Elementwise L2 projection onto P_p."""
    rule = quad_rule(quad_degree if quad_degree is not None else _default_quad_degree(field, p))
    vals = evaluate(field, mesh, rule.points)
    if vals.ndim != 2:
        raise ValueError("project_scalar expects a scalar field")
    return PiecewisePoly(mesh, p, scalar_coeffs_from_values(vals, rule, p))


def project_vector(field, p: int, mesh: Mesh, quad_degree: int | None = None) -> PiecewisePoly:
    """Componentwise elementwise L2 projection onto P_p(K; R^2)."""
    rule = quad_rule(quad_degree if quad_degree is not None else _default_quad_degree(field, p))
    vals = evaluate(field, mesh, rule.points, vector=True)
    if vals.ndim != 3:
        raise ValueError("project_vector expects a vector field")
    return PiecewisePoly(mesh, p, scalar_coeffs_from_values(vals, rule, p))


def project_rtn(field, p: int, mesh: Mesh, quad_degree: int | None = None) -> RTNField:
    """Elementwise L2 projection onto RTN_p."""
    rule = quad_rule(quad_degree if quad_degree is not None else _default_quad_degree(field, p + 1))
    vals = evaluate(field, mesh, rule.points, vector=True)
    if vals.ndim != 3:
        raise ValueError("project_rtn expects a vector field")
    return RTNField(mesh, p, rtn_coeffs_from_values(vals, rule, p, mesh))


def divergence(field: RTNField) -> PiecewisePoly:
    """Exact elementwise divergence, returned in P_p."""
    D = rtn_tables(field.degree).D
    c = field.coeffs @ D.T / field.mesh.detJ[:, None]
    return PiecewisePoly(field.mesh, field.degree, c)


def normal_trace(field: RTNField, face: int, side: int = 0) -> np.ndarray:
    """Legendre coefficients of v.n_side on ``face``.

    The face is parametrised by s in [0, 1] from its lower to its higher
    vertex index; the result ``c`` represents ``sum_k c[k] L_k(s)`` with ``n``
    the outward unit normal of the element on ``side`` (0 or 1).
    """
    mesh = field.mesh
    K = int(mesh.face_elements[face, side])
    if K < 0:
        raise ValueError(f"face {face} has no element on side {side}")
    i = int(np.flatnonzero(mesh.element_faces[K] == face)[0])
    p = field.degree
    s, ws = gauss_line(p + 1)
    forward = mesh.face_orientation[K, i] > 0
    t = s if forward else 1.0 - s
    vals = field.eval_at(np.array([K]), _face_points(i, t))[0]
    a, b = mesh.vertices[mesh.elements[K, LOCAL_FACES[i]]]
    d = b - a
    n = np.array([d[1], -d[0]]) / np.hypot(*d)
    vn = vals @ n
    L = shifted_legendre(p, s)
    return (2 * np.arange(p + 1) + 1) * ((ws * vn) @ L)


def eval_face_poly(coeffs, s) -> np.ndarray:
    return shifted_legendre(len(coeffs) - 1, s) @ np.asarray(coeffs)


def l2_norms(field, mesh: Mesh, quad_degree: int) -> np.ndarray:
    """Elementwise L2 norms of an arbitrary (scalar or vector) field by quadrature."""
    rule = quad_rule(quad_degree)
    v = evaluate(field, mesh, rule.points)
    sq = v ** 2 if v.ndim == 2 else (v ** 2).sum(-1)
    return np.sqrt(mesh.detJ * (sq @ rule.weights))


def dump_coefficients(path, field) -> None:
    """CSV rows (element, basis index[, component], coefficient)."""
    c = field.coeffs
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if c.ndim == 2:
            w.writerow(["element", "basis", "coefficient"])
            for k, row in enumerate(c):
                for i, v in enumerate(row):
                    w.writerow([k, i, repr(float(v))])
        else:
            w.writerow(["element", "basis", "component", "coefficient"])
            for k in range(c.shape[0]):
                for i in range(c.shape[1]):
                    for comp in range(c.shape[2]):
                        w.writerow([k, i, comp, repr(float(c[k, i, comp]))])
