"""Conforming Lagrange finite elements for -div(grad u) = f + div(xi).

The discrete space uses a hierarchic basis: vertex hats, edge functions
``lam_s lam_e P_{k-2}(lam_e - lam_s)`` for k = 2..p', and interior bubbles
``lam_0 lam_1 lam_2 q`` with q in an orthonormal basis of P_{p'-3}. Edge
functions are oriented from the lower to the higher global vertex index so
that neighbouring elements agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg

from .errors import IncompatibleDataError
from .linsolve import solve_spd
from .mesh import LOCAL_FACES, REF_GRAD_LAMBDA, BoundaryPartition, Mesh
from .polyspace import PiecewisePoly, dubiner, evaluate, field_degree, project_vector
from .quadrature import quad_rule


@dataclass(frozen=True)
class H1Basis:
    degree: int

    @property
    def n_edge(self) -> int:
        return self.degree - 1

    @property
    def n_interior(self) -> int:
        q = self.degree - 3
        return (q + 1) * (q + 2) // 2 if q >= 0 else 0

    @property
    def dim(self) -> int:
        return 3 + 3 * self.n_edge + self.n_interior

    def eval(self, xhat) -> tuple[np.ndarray, np.ndarray]:
        """Values (..., n) and reference gradients (..., n, 2), local edge orientation."""
        xhat = np.asarray(xhat, dtype=float)
        x, y = xhat[..., 0], xhat[..., 1]
        lam = np.stack([1.0 - x - y, x, y], axis=-1)
        glam = REF_GRAD_LAMBDA  # (3, 2)
        vals = [lam[..., i] for i in range(3)]
        grads = [np.broadcast_to(glam[i], xhat.shape) for i in range(3)]
        p = self.degree
        if p >= 2:
            for s, e in LOCAL_FACES:
                ls, le = lam[..., s], lam[..., e]
                t = le - ls
                dt = glam[e] - glam[s]
                P = npleg.legvander(t, p - 2)
                dP = npleg.legvander(t, max(p - 3, 0)) @ npleg.legder(np.eye(p - 1), axis=0) if p > 2 else np.zeros_like(P)
                prod = ls * le
                dprod = ls[..., None] * glam[e] + le[..., None] * glam[s]
                for k in range(p - 1):
                    vals.append(prod * P[..., k])
                    grads.append(dprod * P[..., k, None] + (prod * dP[..., k])[..., None] * dt)
        if p >= 3:
            b = lam[..., 0] * lam[..., 1] * lam[..., 2]
            db = (
                (lam[..., 1] * lam[..., 2])[..., None] * glam[0]
                + (lam[..., 0] * lam[..., 2])[..., None] * glam[1]
                + (lam[..., 0] * lam[..., 1])[..., None] * glam[2]
            )
            Q, dQ = dubiner(p - 3, xhat)
            for i in range(Q.shape[-1]):
                vals.append(b * Q[..., i])
                grads.append(db * Q[..., i, None] + b[..., None] * dQ[..., i, :])
        return np.stack(vals, axis=-1), np.stack(grads, axis=-2)


@lru_cache(maxsize=None)
def _reference_tensors(p: int):
    basis = H1Basis(p)
    q = quad_rule(2 * p)
    _, G = basis.eval(q.points)
    S = np.einsum("q,qia,qjb->abij", q.weights, G, G)
    qm = quad_rule(p)
    V, _ = basis.eval(qm.points)
    mean = qm.weights @ V
    S.setflags(write=False)
    mean.setflags(write=False)
    return S, mean


@dataclass
class DofMap:
    mesh: Mesh
    degree: int
    local_dofs: np.ndarray  # (nK, nloc)
    signs: np.ndarray  # (nK, nloc), local basis = sign * global basis
    n_dofs: int

    @classmethod
    def build(cls, mesh: Mesh, p: int) -> "DofMap":
        basis = H1Basis(p)
        nK, nV, nF = mesh.n_elements, mesh.n_vertices, mesh.n_faces
        ne, nb = basis.n_edge, basis.n_interior
        cols = [mesh.elements]
        signs = [np.ones((nK, 3))]
        k = np.arange(2, p + 1)
        for i in range(3):
            f = mesh.element_faces[:, i]
            cols.append(nV + f[:, None] * ne + np.arange(ne)[None, :])
            rev = mesh.face_orientation[:, i][:, None] < 0
            signs.append(np.where(rev, (-1.0) ** k[None, :], 1.0))
        base = nV + nF * ne
        cols.append(base + np.arange(nK)[:, None] * nb + np.arange(nb)[None, :])
        signs.append(np.ones((nK, nb)))
        return cls(mesh, p, np.hstack(cols).astype(np.int64), np.hstack(signs), base + nK * nb)

    def dirichlet_dofs(self, partition: BoundaryPartition) -> np.ndarray:
        mesh = self.mesh
        faces = partition.dirichlet_faces
        if len(faces) == 0:
            return np.zeros(0, dtype=np.int64)
        ne = self.degree - 1
        verts = np.unique(mesh.faces[faces].ravel())
        edge = (mesh.n_vertices + faces[:, None] * ne + np.arange(ne)[None, :]).ravel()
        return np.unique(np.concatenate([verts, edge])).astype(np.int64)


@dataclass
class ProblemData:
    """Source data f and flux data xi of -div(grad u) = f + div(xi), with boundary partition."""

    f: object = None
    xi: object = None
    partition: BoundaryPartition | None = None

    def check_compatible(self, mesh: Mesh, tol: float = 1e-10) -> float:
        """Return (f, 1); raise when Gamma_N is the whole boundary and it is not zero."""
        rule = quad_rule(_data_quad_degree(self.f, 0))
        fv = evaluate(self.f, mesh, rule.points)
        integ = float(mesh.detJ @ (fv @ rule.weights))
        if self.partition is not None and self.partition.pure_neumann:
            norm = float(np.sqrt(mesh.detJ @ ((fv**2) @ rule.weights)))
            if abs(integ) > tol * max(norm * np.sqrt(mesh.domain_area), 1e-300) and abs(integ) > 1e-300:
                raise IncompatibleDataError(
                    f"compatibility violated: (f, 1) = {integ:.3e} but the whole boundary is Neumann"
                )
        return integ


def _data_quad_degree(data, p):
    d = field_degree(data)
    return p + (d if d is not None else p + 10)


class GradientField:
    """Exact gradient of a primal solution; degree p' - 1 per element."""

    def __init__(self, sol: "PrimalSolution"):
        self.sol = sol
        self.degree = sol.degree - 1

    def eval_at(self, elements, xhat):
        return self.sol.grad_at(elements, xhat)


@dataclass
class PrimalSolution:
    mesh: Mesh
    degree: int
    coeffs: np.ndarray
    dofmap: DofMap
    data: ProblemData | None = None
    partition: BoundaryPartition | None = None
    info: dict = field(default_factory=dict)

    @property
    def local_coeffs(self) -> np.ndarray:
        return self.coeffs[self.dofmap.local_dofs] * self.dofmap.signs

    def _elements(self, elements):
        return np.arange(self.mesh.n_elements) if elements is None else np.asarray(elements)

    def eval_at(self, elements, xhat):
        el = self._elements(elements)
        V, _ = H1Basis(self.degree).eval(xhat)
        c = self.local_coeffs[el]
        return np.einsum("qi,ki->kq", V, c) if V.ndim == 2 else np.einsum("kqi,ki->kq", V, c)

    def grad_at(self, elements, xhat):
        el = self._elements(elements)
        _, G = H1Basis(self.degree).eval(xhat)
        c = self.local_coeffs[el]
        gref = np.einsum("qia,ki->kqa", G, c) if G.ndim == 3 else np.einsum("kqia,ki->kqa", G, c)
        # grad = J^{-T} grad_ref
        return np.einsum("kba,kqb->kqa", self.mesh.Jinv[el], gref)

    def gradient(self) -> GradientField:
        return GradientField(self)

    def gradient_poly(self) -> PiecewisePoly:
        """grad u_h as a vector PiecewisePoly of degree p' - 1 (exact)."""
        return project_vector(self.gradient(), self.degree - 1, self.mesh, quad_degree=2 * self.degree)

    def energy(self) -> float:
        rule = quad_rule(2 * self.degree)
        g = self.grad_at(None, rule.points)
        return float(np.sqrt(self.mesh.detJ @ ((g**2).sum(-1) @ rule.weights)))

    def mean(self) -> float:
        rule = quad_rule(self.degree)
        return float(self.mesh.detJ @ (self.eval_at(None, rule.points) @ rule.weights))


def assemble_stiffness(mesh: Mesh, dofmap: DofMap) -> sp.csr_matrix:
    S, _ = _reference_tensors(dofmap.degree)
    Ji = mesh.Jinv
    G = np.einsum("kac,kbc->kab", Ji, Ji) * mesh.detJ[:, None, None]
    Kloc = np.einsum("kab,abij->kij", G, S)
    Kloc *= dofmap.signs[:, :, None] * dofmap.signs[:, None, :]
    rows = np.repeat(dofmap.local_dofs, dofmap.local_dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofmap.local_dofs, (1, dofmap.local_dofs.shape[1])).ravel()
    A = sp.coo_matrix((Kloc.ravel(), (rows, cols)), shape=(dofmap.n_dofs, dofmap.n_dofs)).tocsr()
    A.sum_duplicates()
    return A


def assemble_load(mesh: Mesh, dofmap: DofMap, data: ProblemData, quad_degree: int | None = None) -> np.ndarray:
    """Vector of (f, v_i) - (xi, grad v_i)."""
    p = dofmap.degree
    if quad_degree is None:
        quad_degree = max(_data_quad_degree(data.f, p), _data_quad_degree(data.xi, p - 1)) + 2
    rule = quad_rule(quad_degree)
    V, G = H1Basis(p).eval(rule.points)
    loc = np.zeros(dofmap.local_dofs.shape)
    if data.f is not None:
        fv = evaluate(data.f, mesh, rule.points)
        loc += np.einsum("q,kq,qi->ki", rule.weights, fv, V) * mesh.detJ[:, None]
    if data.xi is not None:
        xv = evaluate(data.xi, mesh, rule.points, vector=True)
        # xi . (J^{-T} g) = (J^{-1} xi) . g
        y = np.einsum("kba,kqa->kqb", mesh.Jinv, xv)
        loc -= np.einsum("q,kqb,qib->ki", rule.weights, y, G) * mesh.detJ[:, None]
    loc *= dofmap.signs
    return np.bincount(dofmap.local_dofs.ravel(), weights=loc.ravel(), minlength=dofmap.n_dofs)


def mean_vector(mesh: Mesh, dofmap: DofMap) -> np.ndarray:
    _, mean = _reference_tensors(dofmap.degree)
    loc = mesh.detJ[:, None] * mean[None, :] * dofmap.signs
    return np.bincount(dofmap.local_dofs.ravel(), weights=loc.ravel(), minlength=dofmap.n_dofs)


def solve_primal(data: ProblemData, mesh: Mesh, degree: int, quad_degree: int | None = None) -> PrimalSolution:
    """Galerkin solution u_h of degree ``degree`` with homogeneous boundary data."""
    if degree < 1:
        raise ValueError("primal degree must be at least 1")
    partition = data.partition if data.partition is not None else BoundaryPartition.uniform(mesh, "D")
    data = ProblemData(data.f, data.xi, partition)
    data.check_compatible(mesh)
    dofmap = DofMap.build(mesh, degree)
    A = assemble_stiffness(mesh, dofmap)
    rhs = assemble_load(mesh, dofmap, data, quad_degree)
    u = np.zeros(dofmap.n_dofs)
    if partition.pure_neumann:
        u = solve_spd(A, rhs, mean_row=mean_vector(mesh, dofmap))
    else:
        fixed = dofmap.dirichlet_dofs(partition)
        free = np.setdiff1d(np.arange(dofmap.n_dofs), fixed)
        u[free] = solve_spd(A[free][:, free], rhs[free])
    return PrimalSolution(mesh, degree, u, dofmap, data, partition,
                          info={"n_dofs": int(dofmap.n_dofs)})


def galerkin_residual(sol: PrimalSolution, quad_degree: int | None = None) -> float:
    """max_i |(f, v_i) - (xi, grad v_i) - (grad u_h, grad v_i)| over free basis functions, relative."""
    A = assemble_stiffness(sol.mesh, sol.dofmap)
    rhs = assemble_load(sol.mesh, sol.dofmap, sol.data, quad_degree)
    r = rhs - A @ sol.coeffs
    if sol.partition.pure_neumann:
        m = mean_vector(sol.mesh, sol.dofmap)
        r = r - m * (m @ r) / (m @ m)
    else:
        r[sol.dofmap.dirichlet_dofs(sol.partition)] = 0.0
    return float(np.abs(r).max() / max(np.abs(rhs).max(), np.abs(A @ sol.coeffs).max(), 1e-300))


def element_energy_errors(sol: PrimalSolution, ref_grad, quad_degree: int | None = None) -> np.ndarray:
    """Elementwise ||grad u - grad u_h||_K for a reference gradient (sampler or field)."""
    qd = quad_degree if quad_degree is not None else 2 * sol.degree + 4
    d = field_degree(ref_grad)
    if d is not None:
        qd = max(qd, 2 * max(d, sol.degree))
    rule = quad_rule(qd)
    g = evaluate(ref_grad, sol.mesh, rule.points, vector=True)
    diff = g - sol.grad_at(None, rule.points)
    return np.sqrt(sol.mesh.detJ * ((diff**2).sum(-1) @ rule.weights))


def energy_error(sol: PrimalSolution, ref_grad, quad_degree: int | None = None) -> float:
    """||grad(u - u_h)|| with quadrature exact to degree >= 2p' + 4."""
    return float(np.sqrt((element_energy_errors(sol, ref_grad, quad_degree) ** 2).sum()))
