"""Patchwise equilibrated flux reconstruction.

For every vertex ``a`` the flux ``sigma_a`` minimises ``||v + tau_a||`` over
broken RTN_p fields on the patch with ``div v = g_a`` and zero normal trace
on the constrained part of the patch boundary. The data are

    g_a   = Pi_p(psi_a f) - grad psi_a . (Pi_p xi + grad u_h)
    tau_a = psi_a (xi + grad u_h)

and the global flux is the sum of the patch fluxes extended by zero.

Two flux spaces are supported:

* ``"V"``: zero normal trace on the whole patch boundary for vertices
  away from the closure of Gamma_D, otherwise on the patch boundary
  minus Gamma_D;
* ``"tilde"``: zero normal trace only on the faces not containing ``a``,
  where the hat function vanishes.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import assemble_patch, scatter_vector
from .errors import IncompatibleDataError
from .linsolve import SaddleSystem, SaddleSolution, solve_saddle
from .mesh import BoundaryPartition, Mesh, Patch, classify_vertices, vertex_patch
from .polyspace import (
    PiecewisePoly,
    RTNField,
    dim_p,
    dim_rtn,
    evaluate,
    face_dof_signs,
    field_degree,
    project_scalar,
    rtn_coeffs_from_values,
    rtn_mass_matrices,
    rtn_tables,
    scalar_basis,
    scalar_coeffs_from_values,
)
from .primal import PrimalSolution, ProblemData
from .quadrature import quad_rule

SPACES = ("V", "tilde")
TARGETS = ("full", "projected")


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("EQUIFLUX_WORKERS", "1")))
    except ValueError:
        return 1


def _data_degree(data, fallback):
    d = field_degree(data)
    return fallback if d is None else d


@dataclass
class PatchProblem:
    patch: Patch
    space: str
    degree: int
    free_faces: np.ndarray
    idx: np.ndarray  # (nE, nR) patch dof of each element-local dof, -1 if constrained
    sign: np.ndarray  # (nE, nR) local = sign * patch dof
    system: SaddleSystem
    tau_sq: float  # ||tau_a||^2 over the patch

    @property
    def closed(self) -> bool:
        return self.system.mean_row is not None

    @property
    def g(self) -> np.ndarray:
        """Coefficients (nE, nP) of g_a on the patch elements (orthonormal basis)."""
        det = self.patch.mesh.detJ[self.patch.elements]
        return self.system.c.reshape(len(det), -1) / det[:, None]

    def local_coeffs(self, x) -> np.ndarray:
        return np.where(self.idx >= 0, x[np.maximum(self.idx, 0)] * self.sign, 0.0)

    def objective(self, x) -> float:
        """||v + tau_a|| for the patch flux with dof vector x."""
        s = self.system
        val = x @ (s.M @ x) - 2.0 * (s.b @ x) + self.tau_sq
        return float(np.sqrt(max(val, 0.0)))

    def objective_sq_shift(self, x) -> float:
        """||v + tau_a||^2 - ||tau_a||^2, free of cancellation against ||tau_a||."""
        s = self.system
        return float(x @ (s.M @ x) - 2.0 * (s.b @ x))


@dataclass
class PatchFlux:
    problem: PatchProblem
    x: np.ndarray
    r: np.ndarray  # (nE, nP) multiplier coefficients
    lam: float

    @property
    def patch(self) -> Patch:
        return self.problem.patch

    @property
    def coeffs(self) -> np.ndarray:
        """Element-local RTN coefficients (nE, nR) on the patch elements."""
        return self.problem.local_coeffs(self.x)

    @property
    def objective(self) -> float:
        return self.problem.objective(self.x)

    def residuals(self) -> tuple[float, float]:
        return self.problem.system.residuals(self.x, self.r.ravel())

    def divergence_residual(self) -> float:
        """max_K ||div sigma_a - g_a||_K over the patch."""
        D = rtn_tables(self.problem.degree).D
        det = self.patch.mesh.detJ[self.patch.elements]
        div = self.coeffs @ D.T / det[:, None]
        return float(np.sqrt(det * ((div - self.problem.g) ** 2).sum(1)).max())


class Equilibrator:
    """Precomputed element data for all patch problems of one flux reconstruction.

    Parameters
    ----------
    mesh, data, sol:
        Mesh, problem data and primal solution u_h (degree p' <= p).
    degree:
        Flux degree p.
    partition:
        Boundary partition defining the patch spaces; defaults to ``data.partition``.
    """

    def __init__(self, mesh: Mesh, data: ProblemData, sol: PrimalSolution | None, degree: int,
                 partition: BoundaryPartition | None = None):
        if degree < 0:
            raise ValueError("flux degree must be nonnegative")
        if sol is not None and sol.degree > max(degree, 1):
            raise ValueError("primal degree p' must not exceed the flux degree p")
        self.mesh = mesh
        self.data = data
        self.sol = sol
        self.p = int(degree)
        self.partition = partition or data.partition or BoundaryPartition.uniform(mesh, "D")
        self.vertex_class = classify_vertices(mesh, self.partition)
        self.nP = dim_p(self.p)
        self.nR = dim_rtn(self.p)
        self.mass = rtn_mass_matrices(mesh, self.p)
        self.signs = face_dof_signs(mesh, self.p)
        self._precompute()

    # -- element data ------------------------------------------------------------------
    def _precompute(self):
        mesh, p = self.mesh, self.p
        nK = mesh.n_elements
        data = self.data
        pp = self.sol.degree if self.sol is not None else 1
        df = _data_degree(data.f, p + 10)
        dx = _data_degree(data.xi, p + 10)
        # Pi_p(lam_j f)
        rule = quad_rule(p + 1 + df)
        lam = rule.barycentric  # (nq, 3)
        phi = scalar_basis(p).values(rule.points)
        fv = evaluate(data.f, mesh, rule.points)
        self.proj_lam_f = np.einsum("q,qj,kq,qi->kji", rule.weights, lam, fv, phi)
        self.proj_f = project_scalar(data.f, p, mesh, quad_degree=p + df)
        # Pi_p xi and grad u_h as degree-p vector coefficients
        rule = quad_rule(p + dx)
        xv = evaluate(data.xi, mesh, rule.points, vector=True)
        self.proj_xi = scalar_coeffs_from_values(xv, rule, p)
        rule = quad_rule(p + max(pp - 1, 0))
        if self.sol is not None:
            gv = self.sol.grad_at(None, rule.points)
            self.grad_u = scalar_coeffs_from_values(gv, rule, p)
        else:
            self.grad_u = np.zeros((nK, self.nP, 2))
        # g[K, j] = Pi_p(lam_j f) - grad lam_j . (Pi_p xi + grad u_h)
        w = self.proj_xi + self.grad_u
        grad_term = np.einsum("kjc,kic->kji", mesh.grad_lambda, w)
        self.g = self.proj_lam_f - grad_term
        # squared L2 size of the two terms of g, used to judge compatibility
        glen = np.linalg.norm(mesh.grad_lambda, axis=-1)
        wsq = (self.proj_xi**2).sum((1, 2)) + (self.grad_u**2).sum((1, 2))
        self.g_scale_sq = mesh.detJ[:, None] * ((self.proj_lam_f**2).sum(-1) + glen**2 * wsq[:, None])
        # target moments (lam_j (xi + grad u_h), psi_i)_K and ||lam_j (xi + grad u_h)||_K^2
        T = rtn_tables(p)
        rule = quad_rule(p + 2 + max(dx, pp - 1))
        psi, _ = T.eval(rule.points)
        lam = rule.barycentric
        v = evaluate(data.xi, mesh, rule.points, vector=True)
        gu = self.sol.grad_at(None, rule.points) if self.sol is not None else 0.0
        v = v + gu
        y = np.einsum("kab,kqa->kqb", mesh.J, v)  # J^T v
        Z = np.einsum("q,qj,kqc->kjqc", rule.weights, lam, y)
        self.target_full = (Z.reshape(nK, 3, -1) @ psi.reshape(len(rule.weights), -1, 2).transpose(0, 2, 1).reshape(-1, self.nR))
        rule = quad_rule(2 + 2 * max(dx, pp - 1))
        lam = rule.barycentric
        v = evaluate(data.xi, mesh, rule.points, vector=True)
        if self.sol is not None:
            v = v + self.sol.grad_at(None, rule.points)
        self.tau_sq_full = mesh.detJ[:, None] * np.einsum("q,qj,kq->kj", rule.weights, lam**2, (v**2).sum(-1))
        self._projected = None

    def _projected_target(self):
        """Moments and squared norms of Pi^RTN(lam_j xi) + lam_j grad u_h."""
        if self._projected is not None:
            return self._projected
        mesh, p = self.mesh, self.p
        nK = mesh.n_elements
        dx = _data_degree(self.data.xi, p + 10)
        rule = quad_rule(p + 2 + dx)
        xv = evaluate(self.data.xi, mesh, rule.points, vector=True)
        lam = rule.barycentric
        proj = np.stack([rtn_coeffs_from_values(lam[None, :, j, None] * xv, rule, p, mesh) for j in range(3)], axis=1)
        # moments of lam_j grad u_h
        T = rtn_tables(p)
        rule = quad_rule(2 * p + 2)
        psi, _ = T.eval(rule.points)
        lam = rule.barycentric
        gu = self.sol.grad_at(None, rule.points) if self.sol is not None else np.zeros((nK, len(rule.weights), 2))
        y = np.einsum("kab,kqa->kqb", mesh.J, gu)
        mom_gu = np.einsum("q,qj,kqc,qic->kji", rule.weights, lam, y, psi)
        moments = np.einsum("kil,kjl->kji", self.mass, proj) + mom_gu
        # ||proj + lam_j grad u||^2 = c M c + 2 c.(lam_j grad u, psi) + ||lam_j grad u||^2
        gsq = mesh.detJ[:, None] * np.einsum("q,qj,kq->kj", rule.weights, lam**2, (gu**2).sum(-1))
        tsq = np.einsum("kji,kil,kjl->kj", proj, self.mass, proj) + 2 * np.einsum("kji,kji->kj", proj, mom_gu) + gsq
        self._projected = (moments, tsq)
        return self._projected

    # -- patch problems ----------------------------------------------------------------
    def free_faces(self, patch: Patch, space: str) -> np.ndarray:
        if space == "V":
            bnd = patch.dirichlet_faces if not patch.interior_vertex else np.zeros(0, dtype=np.int64)
        elif space == "tilde":
            bnd = np.setdiff1d(patch.faces, patch.gamma_faces)
        else:
            raise ValueError(f"unknown flux space {space!r}")
        return np.concatenate([patch.inner_faces, np.asarray(bnd, dtype=np.int64)])

    def patch(self, a: int) -> Patch:
        return vertex_patch(self.mesh, a, self.partition, self.vertex_class)

    def build(self, a: int, space: str = "V", target: str = "full") -> PatchProblem:
        if target not in TARGETS:
            raise ValueError(f"unknown target {target!r}")
        mesh, p = self.mesh, self.p
        patch = self.patch(a)
        el, slot = patch.elements, patch.local_index
        nE, nP, nR = len(el), self.nP, self.nR
        free = self.free_faces(patch, space)
        face_pos = {int(f): i for i, f in enumerate(free)}
        nf = p + 1
        n_face_dofs = len(free) * nf
        n_int = nR - 3 * nf
        idx = -np.ones((nE, nR), dtype=np.int64)
        for e, K in enumerate(el):
            for i in range(3):
                pos = face_pos.get(int(mesh.element_faces[K, i]))
                if pos is not None:
                    idx[e, i * nf:(i + 1) * nf] = pos * nf + np.arange(nf)
            idx[e, 3 * nf:] = n_face_dofs + e * n_int + np.arange(n_int)
        sign = self.signs[el]
        N = n_face_dofs + nE * n_int
        M = assemble_patch(self.mass[el], idx, sign, N)
        M = 0.5 * (M + M.T)
        D = rtn_tables(p).D
        B = np.zeros((nE * nP, N))
        for e in range(nE):
            ok = idx[e] >= 0
            B[e * nP:(e + 1) * nP, idx[e, ok]] = D[:, ok] * sign[e, ok]
        if target == "full":
            moments, tsq = self.target_full[el, slot], self.tau_sq_full[el, slot]
        else:
            mom, sq = self._projected_target()
            moments, tsq = mom[el, slot], sq[el, slot]
        b = -scatter_vector(moments, idx, sign, N)
        det = mesh.detJ[el]
        c = (det[:, None] * self.g[el, slot]).ravel()
        closed = len(free) == len(patch.inner_faces)
        mean_row = None
        if closed:
            mhat = scalar_basis(p).values(quad_rule(p).points).T @ quad_rule(p).weights
            mean_row = (det[:, None] * mhat[None, :]).ravel()
            integ = mean_row @ self.g[el, slot].ravel()
            scale = np.sqrt(self.g_scale_sq[el, slot].sum() * det.sum())
            if abs(integ) > 1e-9 * max(scale, 1e-300) and abs(integ) > 1e-300:
                raise IncompatibleDataError(
                    f"patch of vertex {a}: (g_a, 1) = {integ:.3e} violates the Neumann compatibility condition"
                )
        system = SaddleSystem(M, B, b, c, mean_row)
        return PatchProblem(patch, space, p, free, idx, sign, system, float(tsq.sum()))

    def solve(self, a: int, space: str = "V", target: str = "full", solver=solve_saddle) -> PatchFlux:
        prob = self.build(a, space, target)
        return patch_solve(prob, solver)

    def solve_all(self, space: str = "V", target: str = "full", vertices=None, workers: int | None = None,
                  solver=solve_saddle) -> dict[int, PatchFlux]:
        verts = range(self.mesh.n_vertices) if vertices is None else vertices
        verts = [int(a) for a in verts]
        workers = n_workers() if workers is None else workers
        run = lambda a: self.solve(a, space, target, solver)
        if workers > 1 and len(verts) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                out = list(pool.map(run, verts))
        else:
            out = [run(a) for a in verts]
        return dict(zip(verts, out))

    def flux(self, space: str = "V", weights=None, workers: int | None = None) -> tuple[RTNField, dict]:
        verts = np.arange(self.mesh.n_vertices)
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            verts = verts[weights != 0.0]
        fluxes = self.solve_all(space, vertices=verts, workers=workers)
        return assemble_flux(fluxes, self.mesh, self.p, weights=weights), fluxes


def patch_rhs(patch: Patch, data: ProblemData, sol: PrimalSolution | None, degree: int) -> np.ndarray:
    """g_a = Pi_p(psi_a f) - grad psi_a . (Pi_p xi + grad u_h) on the patch elements, (nE, nP)."""
    eq = Equilibrator(patch.mesh, data, sol, degree)
    return eq.g[patch.elements, patch.local_index]


def patch_solve(problem: PatchProblem, solver=solve_saddle) -> PatchFlux:
    sol: SaddleSolution = solver(problem.system)
    nE = len(problem.patch.elements)
    return PatchFlux(problem, sol.x, sol.y.reshape(nE, -1), sol.lam)


def assemble_flux(fluxes: dict[int, PatchFlux], mesh: Mesh, degree: int, weights=None,
                  require_all: bool | None = None) -> RTNField:
    """sigma = sum_a w_a sigma_a, each patch flux extended by zero."""
    if require_all is None:
        require_all = weights is None
    if require_all:
        missing = set(range(mesh.n_vertices)) - set(fluxes)
        if missing:
            raise KeyError(f"missing patch flux for vertices {sorted(missing)[:5]}")
    c = np.zeros((mesh.n_elements, dim_rtn(degree)))
    for a, pf in fluxes.items():
        if pf.problem.degree != degree:
            raise ValueError("all patch fluxes must have the same degree")
        w = 1.0 if weights is None else float(weights[a])
        np.add.at(c, pf.patch.elements, w * pf.coeffs)
    return RTNField(mesh, degree, c)


def face_moment_jumps(sigma: RTNField) -> np.ndarray:
    """Per-face L2 norm of the normal-trace jump (interior) or the normal trace (boundary)."""
    mesh, p = sigma.mesh, sigma.degree
    nf = p + 1
    g = (sigma.coeffs[:, : 3 * nf] * face_dof_signs(mesh, p)[:, : 3 * nf]).reshape(mesh.n_elements, 3, nf)
    # global moments seen from each side; an H(div) field has equal values
    acc = np.zeros((mesh.n_faces, 2, nf))
    fe = mesh.element_faces
    side = (mesh.face_elements[fe, 1] == np.arange(mesh.n_elements)[:, None]).astype(int)
    acc[fe, side] = g
    bnd = mesh.is_boundary_face
    diff = np.where(bnd[:, None], acc[:, 0], acc[:, 0] - acc[:, 1])
    k = np.arange(nf)
    return np.sqrt(((2 * k + 1) * diff**2).sum(1) / mesh.face_lengths)


def verify_flux(sigma: RTNField, div_target: PiecewisePoly, neumann_faces, data_norm: float = 0.0) -> dict:
    """Divergence, interior jump and Neumann trace residuals of an assembled flux."""
    mesh = sigma.mesh
    div = sigma.divergence()
    d = max(div.degree, div_target.degree)
    res = (div.elevate(d) - div_target.elevate(d)).norms()
    jumps = face_moment_jumps(sigma)
    inner = ~mesh.is_boundary_face
    nf = np.asarray(neumann_faces, dtype=np.int64)
    return {
        "div_residual": float(res.max(initial=0.0)),
        "div_residual_rel": float(res.max(initial=0.0) / (1.0 + data_norm)),
        "max_interior_jump": float(jumps[inner].max(initial=0.0)),
        "max_neumann_trace": float(jumps[nf].max(initial=0.0)) if len(nf) else 0.0,
    }


def verify_equilibration(sigma: RTNField, data: ProblemData, degree: int | None = None,
                         partition: BoundaryPartition | None = None) -> dict:
    """Checks div sigma = Pi_p f, normal continuity and sigma.n = 0 on Gamma_N."""
    p = sigma.degree if degree is None else degree
    mesh = sigma.mesh
    df = _data_degree(data.f, p + 10)
    pf = project_scalar(data.f, p, mesh, quad_degree=p + df)
    partition = partition or data.partition or BoundaryPartition.uniform(mesh, "D")
    rule = quad_rule(2 * df)
    fv = evaluate(data.f, mesh, rule.points)
    fnorm = float(np.sqrt(mesh.detJ @ ((fv**2) @ rule.weights)))
    report = verify_flux(sigma, pf, partition.neumann_faces, fnorm)
    report["f_norm"] = fnorm
    return report
