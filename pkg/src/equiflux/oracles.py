"""Independent reference computations used to check the main algorithms.

* :func:`kkt_oracle` solves a :class:`SaddleSystem` by the nullspace method
  (QR of the constraint block, reduced SPD solve); it shares no factorization
  with :func:`equiflux.linsolve.solve_saddle`.
* :func:`dual_norm_oracle` and :func:`error_oracle` use overkill primal
  solves (degree p + 3 on uniformly refined meshes) and track the relative
  change between refinement levels as a margin.
* :func:`divfree_perturbations` builds random divergence-free patch fields
  as rotated gradients of continuous piecewise polynomials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .equilibration import PatchProblem
from .errors import SolverError
from .linsolve import SaddleSolution, SaddleSystem
from .mesh import BoundaryPartition, Mesh, ancestor_map, refine_uniform
from .polyspace import field_degree, rtn_coeffs_from_values
from .primal import DofMap, PrimalSolution, ProblemData, solve_primal
from .quadrature import quad_rule

DEFAULT_MAX_DOFS = 400_000


# -- KKT nullspace oracle ------------------------------------------------------------

def kkt_oracle(system: SaddleSystem) -> SaddleSolution:
    """Nullspace-method solution of the saddle system."""
    M, B, b, c = system.M, system.B, system.b, system.c
    m = system.m
    if system.mean_row is not None:
        # trailing columns of a complete QR of the mean row span its complement
        Qfull, _ = np.linalg.qr(system.mean_row[:, None], mode="complete")
        P = Qfull[:, 1:]
    else:
        P = np.eye(m)
    C = P.T @ B
    d = P.T @ c
    r = C.shape[0]
    Q, R = np.linalg.qr(C.T, mode="complete")
    Y, Z = Q[:, :r], Q[:, r:]
    Rr = R[:r, :r]
    diag = np.abs(np.diag(Rr))
    if r and diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise SolverError("constraint block is rank deficient")
    x0 = Y @ sla.solve_triangular(Rr, d, trans="T")
    H = Z.T @ M @ Z
    L = np.linalg.cholesky(H)
    rhs = Z.T @ (b - M @ x0)
    z = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    x = x0 + Z @ z
    y2 = sla.solve_triangular(Rr, Y.T @ (M @ x - b))
    y = P @ y2
    lam = 0.0
    if system.mean_row is not None:
        mr = system.mean_row
        lam = float(mr @ (B @ x - c) / (mr @ mr))
    return SaddleSolution(x, y, lam)


def random_saddle_system(rng: np.random.Generator, n: int, m: int, mean: bool = False,
                         cond: float = 1e3) -> SaddleSystem:
    """Random SPD M with given condition number and full-rank B (bordered when ``mean``)."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.geomspace(1.0, cond, n)
    M = (Q * ev) @ Q.T
    M = 0.5 * (M + M.T)
    B = rng.standard_normal((m, n))
    mean_row = None
    if mean:
        mean_row = rng.uniform(0.5, 1.5, m)
        # B^T has the mean row in its left nullspace, like a closed patch
        B = B - np.outer(mean_row, mean_row @ B) / (mean_row @ mean_row)
    c = rng.standard_normal(m)
    if mean:
        c = c - mean_row * (mean_row @ c) / (mean_row @ mean_row)
    return SaddleSystem(M, B, rng.standard_normal(n), c, mean_row)


# -- transfer of coarse fields to refined meshes ---------------------------------------

class TransferredField:
    """View of a field defined on an ancestor mesh, evaluated on a refined mesh."""

    def __init__(self, base, fine: Mesh, coarse: Mesh):
        self.base = base
        self.anc, self.A, self.b = ancestor_map(fine, coarse)
        self.poly_degree = field_degree(base)

    def eval_at(self, elements, xhat):
        el = np.arange(len(self.anc)) if elements is None else np.asarray(elements)
        xhat = np.asarray(xhat, dtype=float)
        if xhat.ndim == 2:
            xc = np.einsum("kab,qb->kqa", self.A[el], xhat) + self.b[el, None, :]
        else:
            xc = np.einsum("kab,kqb->kqa", self.A[el], xhat) + self.b[el, None, :]
        return self.base.eval_at(self.anc[el], xc)


def transfer(field_, fine: Mesh, coarse: Mesh):
    if field_ is None or not hasattr(field_, "eval_at") or fine is coarse:
        return field_
    return TransferredField(field_, fine, coarse)


def transfer_data(data: ProblemData, fine: Mesh, coarse: Mesh, partition: BoundaryPartition) -> ProblemData:
    return ProblemData(transfer(data.f, fine, coarse), transfer(data.xi, fine, coarse), partition)


# -- overkill primal oracles ------------------------------------------------------------

@dataclass
class OracleResult:
    value: float
    margin: float
    converged: bool
    levels: int
    degree: int
    history: list = field(default_factory=list)
    element_values: np.ndarray | None = None  # per coarse element (error oracle)
    reference: PrimalSolution | None = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "margin": self.margin,
            "converged": self.converged,
            "levels": self.levels,
            "degree": self.degree,
            "history": list(self.history),
        }


def _refinement_sequence(mesh: Mesh, partition: BoundaryPartition, max_levels: int):
    m, part = mesh, partition
    for level in range(1, max_levels + 1):
        m = refine_uniform(m)
        part = part.refine(m)
        yield level, m, part


def _estimated_dofs(mesh: Mesh, degree: int) -> int:
    return mesh.n_vertices + mesh.n_faces * (degree - 1) + mesh.n_elements * max(degree - 2, 0) * max(degree - 1, 0) // 2


def dual_norm_oracle(data: ProblemData, mesh: Mesh, degree: int, tol: float = 0.005,
                     min_levels: int = 2, max_levels: int = 4, max_dofs: int = DEFAULT_MAX_DOFS) -> OracleResult:
    """||grad u|| of the weak solution, via overkill solves on refined meshes.

    Equals the dual norm sup_v [(f, v) - (xi, grad v)] / ||grad v|| over the
    test space set by ``data.partition``. Levels start at one refinement and
    continue until two consecutive values differ by less than ``tol``
    (relative) and at least ``min_levels`` refinements were used.
    """
    partition = data.partition or BoundaryPartition.uniform(mesh, "D")
    history, prev, value, margin, level = [], None, 0.0, np.inf, 0
    ref = None
    for level, fine, part in _refinement_sequence(mesh, partition, max_levels):
        if _estimated_dofs(fine, degree) > max_dofs and prev is not None:
            level -= 1
            break
        sol = solve_primal(transfer_data(data, fine, mesh, part), fine, degree)
        value = sol.energy()
        history.append(value)
        ref = sol
        if prev is not None:
            margin = abs(value - prev) / max(value, 1e-300) if value > 0 else (0.0 if prev == 0 else np.inf)
            if level >= min_levels and margin < tol:
                break
        prev = value
    if value == 0.0 and all(h == 0.0 for h in history):
        margin = 0.0
    return OracleResult(value, float(margin), bool(margin < tol), level, degree, history, reference=ref)


def error_oracle(sol: PrimalSolution, data: ProblemData, exact_grad=None, degree: int | None = None,
                 tol: float = 0.001, min_levels: int = 2, max_levels: int = 4,
                 max_dofs: int = DEFAULT_MAX_DOFS) -> OracleResult:
    """Elementwise and global ||grad(u - u_h)||.

    With ``exact_grad`` the error is integrated directly (margin 0).
    Otherwise the reference is an overkill solve of degree ``degree``
    (default p' + 3) on uniformly refined meshes.
    """
    from .primal import element_energy_errors

    mesh = sol.mesh
    if exact_grad is not None:
        el = element_energy_errors(sol, exact_grad)
        return OracleResult(float(np.sqrt((el**2).sum())), 0.0, True, 0, -1, [], el)
    degree = sol.degree + 3 if degree is None else degree
    partition = sol.partition
    history, prev, margin, level = [], None, np.inf, 0
    el_err = np.zeros(mesh.n_elements)
    ref = None
    for level, fine, part in _refinement_sequence(mesh, partition, max_levels):
        if _estimated_dofs(fine, degree) > max_dofs and prev is not None:
            level -= 1
            break
        r = solve_primal(transfer_data(data, fine, mesh, part), fine, degree)
        anc, A, b = ancestor_map(fine, mesh)
        rule = quad_rule(2 * degree)
        xc = np.einsum("kab,qb->kqa", A, rule.points) + b[:, None, :]
        diff = r.grad_at(None, rule.points) - sol.grad_at(anc, xc)
        fine_sq = fine.detJ * ((diff**2).sum(-1) @ rule.weights)
        el_err = np.sqrt(np.bincount(anc, weights=fine_sq, minlength=mesh.n_elements))
        value = float(np.sqrt(fine_sq.sum()))
        history.append(value)
        ref = r
        if prev is not None:
            margin = abs(value - prev) / value if value > 0 else (0.0 if prev == 0 else np.inf)
            if level >= min_levels and margin < tol:
                break
        prev = value
    if history and all(h == 0.0 for h in history):
        margin = 0.0
    return OracleResult(history[-1], float(margin), bool(margin < tol), level, degree, history, el_err, ref)


# -- divergence-free patch perturbations ---------------------------------------------

def divfree_perturbations(problem: PatchProblem, count: int, rng: np.random.Generator,
                          degree: int | None = None) -> list[np.ndarray]:
    """Random patch dof vectors w with div w = 0 and the patch boundary constraints.

    Each w is the rotated gradient (d_y phi, -d_x phi) of a random continuous
    piecewise polynomial phi of degree p + 1 supported in the patch and
    vanishing on its constrained boundary.
    """
    patch = problem.patch
    mesh = patch.mesh
    q = problem.degree + 1 if degree is None else degree
    dm = DofMap.build(mesh, q)
    el = patch.elements
    in_patch = np.zeros(mesh.n_elements, dtype=bool)
    in_patch[el] = True
    free = set(int(f) for f in problem.free_faces)
    constrained = [int(f) for f in patch.faces if int(f) not in free]
    # candidate dofs: those whose support lies in the patch
    cand = set(dm.local_dofs[el].ravel().tolist())
    outside = set(dm.local_dofs[~in_patch].ravel().tolist())
    cand -= outside
    # remove dofs that do not vanish on constrained faces
    ne = q - 1
    for f in constrained:
        cand -= set(mesh.faces[f].tolist())
        cand -= set((mesh.n_vertices + f * ne + np.arange(ne)).tolist())
    cand = np.array(sorted(cand), dtype=np.int64)
    if len(cand) == 0:
        return []
    rule = quad_rule(2 * q + 2)
    out = []
    for _ in range(count):
        coeffs = np.zeros(dm.n_dofs)
        coeffs[cand] = rng.standard_normal(len(cand))
        phi = PrimalSolution(mesh, q, coeffs, dm)
        g = phi.grad_at(el, rule.points)
        rot = np.stack([g[..., 1], -g[..., 0]], axis=-1)
        c = rtn_coeffs_from_values(rot, rule, problem.degree, mesh, el)
        x = np.zeros(problem.system.n)
        ok = problem.idx >= 0
        x[problem.idx[ok]] = (c * problem.sign)[ok]
        if np.abs(c[~ok]).max(initial=0.0) > 1e-9 * max(np.abs(c).max(), 1.0):
            raise AssertionError("perturbation violates a boundary constraint")
        out.append(x)
    return out


def divfree_noise(mesh: Mesh, degree: int, zero_faces, rng: np.random.Generator, scale: float = 1.0):
    """Random H(div)-conforming RTN field with zero divergence and zero trace on ``zero_faces``.

    The field is the rotated gradient of a random continuous piecewise
    polynomial of degree ``degree + 1`` whose trace vanishes on ``zero_faces``.
    """
    from .polyspace import RTNField

    q = degree + 1
    dm = DofMap.build(mesh, q)
    coeffs = rng.standard_normal(dm.n_dofs)
    zero_faces = np.asarray(zero_faces, dtype=np.int64)
    if len(zero_faces):
        ne = q - 1
        coeffs[np.unique(mesh.faces[zero_faces].ravel())] = 0.0
        coeffs[(mesh.n_vertices + zero_faces[:, None] * ne + np.arange(ne)).ravel()] = 0.0
    phi = PrimalSolution(mesh, q, scale * coeffs, dm)
    rule = quad_rule(2 * q + 2)
    g = phi.grad_at(None, rule.points)
    rot = np.stack([g[..., 1], -g[..., 0]], axis=-1)
    return RTNField(mesh, degree, rtn_coeffs_from_values(rot, rule, degree, mesh))
