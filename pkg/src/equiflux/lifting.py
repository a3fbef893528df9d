"""Discrete H(div) liftings with degree-robust stability.

:func:`lift` builds, for f in P_{p-1} and xi in RTN_{p-1}, an H(div)-conforming
sigma in RTN_p with div sigma = f and sigma.n = 0 on Gamma_N, and with
||sigma + xi|| comparable to the dual norm of the data, that is ||grad u||.
The construction is a lowest-order primal solve followed by degree-p
equilibration.

:func:`lift_weighted` does the same for the weighted data psi f - grad psi . xi,
where psi is a continuous piecewise affine weight. The weighted patch fluxes
come from the relaxed space (zero trace only where the hat function
vanishes). A global lowest-order lifting of grad psi . grad u_h corrects the
divergence, with Neumann conditions on the boundary faces where psi = 0.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .equilibration import Equilibrator, verify_flux
from .errors import IncompatibleDataError, SolverError
from .mesh import BoundaryPartition, Mesh, vertex_patch
from .oracles import OracleResult, dual_norm_oracle
from .polyspace import (
    PiecewisePoly,
    RTNField,
    evaluate,
    field_degree,
    project_rtn,
    scalar_basis,
    scalar_coeffs_from_values,
)
from .primal import ProblemData, solve_primal
from .quadrature import quad_rule

# oracle values at or below this are treated as zero
ZERO_TOL = 1e-14


def _check_degree(field_, limit: int, name: str) -> None:
    d = getattr(field_, "degree", None) if isinstance(field_, (PiecewisePoly, RTNField)) else None
    if d is not None and d > limit:
        raise ValueError(f"{name} has degree {d}, expected at most {limit}")


def flux_objective(sigma: RTNField, xi=None, weight: "HatCombination | None" = None) -> float:
    """||sigma + w xi|| where w is an optional piecewise affine weight."""
    mesh, p = sigma.mesh, sigma.degree
    dx = field_degree(xi)
    dx = p + 6 if dx is None else dx
    rule = quad_rule(2 * max(p + 1, dx + (weight is not None)))
    v = sigma.eval_at(None, rule.points)
    xv = evaluate(xi, mesh, rule.points, vector=True)
    if weight is not None:
        xv = xv * weight.eval_at(None, rule.points)[..., None]
    v = v + xv
    return float(np.sqrt(mesh.detJ @ ((v**2).sum(-1) @ rule.weights)))


@dataclass
class LiftResult:
    """Lifted flux with its constraint residuals, objective and stability data."""

    kind: str
    sigma: RTNField
    residuals: dict
    objective: float
    oracle: OracleResult | None = None
    constant: dict | None = None
    timings: dict = field(default_factory=dict)
    xi: object = None
    weight: "HatCombination | None" = None

    @property
    def degree(self) -> int:
        return self.sigma.degree

    @property
    def feasible_tolerance(self) -> float:
        return 1e-10

    def feasible(self, tol: float | None = None) -> bool:
        tol = self.feasible_tolerance if tol is None else tol
        r = self.residuals
        return (r["div_residual_rel"] <= tol and r["max_interior_jump"] <= tol
                and r["max_neumann_trace"] <= tol)

    def with_flux(self, sigma: RTNField) -> "LiftResult":
        """Same record for another flux (used to probe minimality)."""
        return LiftResult(self.kind, sigma, self.residuals, flux_objective(sigma, self.xi, self.weight),
                          self.oracle, self.constant, {}, self.xi, self.weight)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "degree": self.degree,
            "residuals": dict(self.residuals),
            "objective": self.objective,
            "oracle": None if self.oracle is None else self.oracle.to_dict(),
            "constant": self.constant,
            "timings": dict(self.timings),
        }
        if self.oracle is not None:
            out["stability"] = stability_ratio(self)
        return out


def stability_ratio(result: LiftResult) -> dict:
    """objective / oracle, and for weighted liftings also objective / (C * oracle).

    Returns ``status = "exact"`` with ratio None when both the oracle and
    the objective vanish. A vanishing oracle with a nonzero objective is a
    violated bound and raises :class:`SolverError`.
    """
    if result.oracle is None:
        raise ValueError("stability ratio needs an oracle value")
    val, obj = result.oracle.value, result.objective
    out = {
        "objective": obj,
        "oracle": val,
        "oracle_margin": result.oracle.margin,
        "oracle_converged": result.oracle.converged,
    }
    if val <= ZERO_TOL:
        if obj > 1e-10:
            raise SolverError(f"oracle vanishes but the lifted flux has norm {obj:.3e}")
        out.update(status="exact", ratio=None, normalized_ratio=None)
        return out
    ratio = obj / val
    out.update(status="ok", ratio=ratio)
    if result.constant is not None:
        out["normalized_ratio"] = ratio / result.constant["C"]
    else:
        out["normalized_ratio"] = ratio
    return out


# -- unweighted lifting -------------------------------------------------------------------

def lift(f, xi, partition: BoundaryPartition, degree: int, mesh: Mesh | None = None, pprime: int = 1,
         oracle: bool = True, oracle_tol: float = 0.005, workers: int | None = None) -> LiftResult:
    """Lift f + div xi to an equilibrated RTN_p flux.

    ``f`` and ``xi`` are normally a :class:`PiecewisePoly` of degree <= p - 1
    and an :class:`RTNField` of degree <= p - 1 (or None); samplers are
    accepted and then only Pi_p f is matched.
    """
    mesh = mesh if mesh is not None else partition.mesh
    if degree < 1:
        raise ValueError("lifting degree must be at least 1")
    if not 1 <= pprime <= degree:
        raise ValueError("need 1 <= p' <= p")
    _check_degree(f, degree - 1, "f")
    _check_degree(xi, degree - 1, "xi")
    timings = {}
    t0 = time.perf_counter()
    data = ProblemData(f, xi, partition)
    data.check_compatible(mesh, tol=1e-11)
    sol = solve_primal(data, mesh, pprime)
    t1 = time.perf_counter()
    eq = Equilibrator(mesh, data, sol, degree)
    sigma, _ = eq.flux(workers=workers)
    t2 = time.perf_counter()
    residuals = _residuals(sigma, eq.proj_f, partition.neumann_faces, data, mesh)
    obj = flux_objective(sigma, xi)
    timings.update(primal=t1 - t0, equilibration=t2 - t1)
    res = LiftResult("lift", sigma, residuals, obj, xi=xi, timings=timings)
    if oracle:
        t3 = time.perf_counter()
        res.oracle = dual_norm_oracle(data, mesh, degree + 3, tol=oracle_tol)
        timings["oracle"] = time.perf_counter() - t3
    return res


def _data_norm(data_f, mesh):
    d = field_degree(data_f)
    rule = quad_rule(2 * (d if d is not None else 8))
    fv = evaluate(data_f, mesh, rule.points)
    return float(np.sqrt(mesh.detJ @ ((fv**2) @ rule.weights)))


def _residuals(sigma, div_target, neumann_faces, data, mesh):
    return verify_flux(sigma, div_target, neumann_faces, _data_norm(data.f, mesh))


# -- weighted lifting --------------------------------------------------------------------

class HatCombination:
    """Continuous piecewise affine function sum_a w_a psi_a."""

    poly_degree = 1

    def __init__(self, mesh: Mesh, weights):
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != (mesh.n_vertices,):
            raise ValueError("need one weight per mesh vertex")
        self.mesh = mesh
        self.weights = w

    def eval_at(self, elements, xhat):
        el = np.arange(self.mesh.n_elements) if elements is None else np.asarray(elements)
        xhat = np.asarray(xhat, dtype=float)
        x, y = xhat[..., 0], xhat[..., 1]
        lam = np.stack([1.0 - x - y, x, y], axis=-1)
        wk = self.weights[self.mesh.elements[el]]
        if lam.ndim == 2:
            return wk @ lam.T
        return np.einsum("kj,kqj->kq", wk, lam)

    def gradients(self) -> np.ndarray:
        """Elementwise constant gradient, shape (nK, 2)."""
        return np.einsum("kj,kjc->kc", self.weights[self.mesh.elements], self.mesh.grad_lambda)

    def max_norm(self) -> float:
        return float(np.abs(self.weights).max())

    def grad_max_norm(self) -> float:
        return float(np.linalg.norm(self.gradients(), axis=1).max())


@dataclass
class WeightedLiftConfig:
    """Weight psi = sum_a w_a psi_a and the derived boundary data of the weighted lifting."""

    mesh: Mesh
    weights: np.ndarray
    poincare: float | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.psi = HatCombination(self.mesh, self.weights)

    @property
    def zero_faces(self) -> np.ndarray:
        """Boundary faces on which psi vanishes (both endpoint weights are zero)."""
        bf = self.mesh.boundary_faces
        zero = np.all(self.weights[self.mesh.faces[bf]] == 0.0, axis=1)
        return bf[zero]

    @property
    def neumann_partition(self) -> BoundaryPartition:
        return BoundaryPartition.from_faces(self.mesh, self.zero_faces)

    @property
    def pure_neumann(self) -> bool:
        return len(self.zero_faces) == len(self.mesh.boundary_faces)

    def poincare_constant(self) -> float:
        if self.poincare is not None:
            return float(self.poincare)
        return 1.0 / np.pi if (self.pure_neumann and self.mesh.is_convex()) else 1.0

    def constant(self) -> dict:
        """C = ||psi||_inf + C_P h_Omega ||grad psi||_inf with its parts."""
        sup, gsup = self.psi.max_norm(), self.psi.grad_max_norm()
        cp, h = self.poincare_constant(), self.mesh.diameter
        return {"C": sup + cp * h * gsup, "psi_sup": sup, "grad_psi_sup": gsup,
                "poincare": cp, "diameter": h}

    def check_compatible(self, f, xi, tol: float = 1e-11) -> float:
        """(f, psi) - (xi, grad psi); raises when the whole boundary is Neumann and it is nonzero."""
        mesh = self.mesh
        df, dx = field_degree(f), field_degree(xi)
        rule = quad_rule(2 * max(df if df is not None else 8, dx if dx is not None else 8, 1) + 2)
        fv = evaluate(f, mesh, rule.points)
        xv = evaluate(xi, mesh, rule.points, vector=True)
        pv = self.psi.eval_at(None, rule.points)
        gp = self.psi.gradients()
        a = float(mesh.detJ @ ((fv * pv) @ rule.weights))
        b = float(mesh.detJ @ (np.einsum("kqc,kc->kq", xv, gp) @ rule.weights))
        if self.pure_neumann:
            scale = (np.sqrt(mesh.detJ @ ((fv**2) @ rule.weights)) * self.psi.max_norm()
                     + np.sqrt(mesh.detJ @ ((xv**2).sum(-1) @ rule.weights)) * self.psi.grad_max_norm())
            scale *= np.sqrt(mesh.domain_area)
            if abs(a - b) > tol * max(scale, 1e-300) and abs(a - b) > 1e-300:
                raise IncompatibleDataError(
                    f"compatibility violated: (f, psi) - (xi, grad psi) = {a - b:.3e} "
                    "but psi vanishes on the whole boundary"
                )
        return a - b


def weighted_div_target(config: WeightedLiftConfig, f, xi, degree: int) -> PiecewisePoly:
    """Pi_p(psi f - grad psi . xi)."""
    mesh = config.mesh
    df, dx = field_degree(f), field_degree(xi)
    rule = quad_rule(degree + 1 + max(df if df is not None else degree + 8, dx if dx is not None else degree + 8))
    v = evaluate(f, mesh, rule.points) * config.psi.eval_at(None, rule.points)
    v = v - np.einsum("kqc,kc->kq", evaluate(xi, mesh, rule.points, vector=True), config.psi.gradients())
    return PiecewisePoly(mesh, degree, scalar_coeffs_from_values(v, rule, degree))


def _assert_zero_face_structure(config: WeightedLiftConfig) -> None:
    """On every face where psi vanishes, the opposite vertex has the face in its Gamma_a."""
    mesh = config.mesh
    for F in config.zero_faces:
        K = mesh.face_elements[F, 0]
        opp = int(np.setdiff1d(mesh.elements[K], mesh.faces[F])[0])
        if not np.all(config.weights[mesh.faces[F]] == 0.0):
            raise AssertionError(f"face {F} has a nonzero endpoint weight")
        if F not in vertex_patch(mesh, opp).gamma_faces:
            raise AssertionError(f"face {F} is not opposite to vertex {opp} in its patch")


def lift_weighted(weights, f, xi, degree: int, mesh: Mesh, poincare: float | None = None,
                  oracle: bool = True, oracle_tol: float = 0.005, workers: int | None = None) -> LiftResult:
    """Weighted lifting sigma = sum_a w_a sigma~_a + sigma_c.

    ``div sigma = psi f - grad psi . xi`` and ``sigma.n = 0`` on the boundary
    faces where psi vanishes. The stability constant
    ``C = ||psi||_inf + C_P h_Omega ||grad psi||_inf`` is reported together
    with the ratio ``||sigma + psi xi|| / (C * oracle)``, where the oracle is
    ||grad u|| of the homogeneous Dirichlet problem with data (f, xi).
    """
    if degree < 1:
        raise ValueError("lifting degree must be at least 1")
    _check_degree(f, degree - 1, "f")
    _check_degree(xi, degree - 1, "xi")
    config = weights if isinstance(weights, WeightedLiftConfig) else WeightedLiftConfig(mesh, weights, poincare)
    config.check_compatible(f, xi)
    timings = {}
    t0 = time.perf_counter()
    dirichlet = BoundaryPartition.uniform(mesh, "D")
    data = ProblemData(f, xi, dirichlet)
    sol = solve_primal(data, mesh, 1)
    t1 = time.perf_counter()
    eq = Equilibrator(mesh, data, sol, degree)
    sigma_t, _ = eq.flux("tilde", weights=config.weights, workers=workers)
    _assert_zero_face_structure(config)
    t2 = time.perf_counter()
    # lowest-order correction for the divergence defect grad psi . grad u_h
    gpsi = config.psi.gradients()
    gu = sol.grad_at(None, np.array([[1.0 / 3.0, 1.0 / 3.0]]))[:, 0, :]
    phi0 = float(scalar_basis(0).values(np.array([[1.0 / 3.0, 1.0 / 3.0]]))[0, 0])
    c = PiecewisePoly(mesh, 0, ((gpsi * gu).sum(1) / phi0)[:, None])
    corr = lift(c, None, config.neumann_partition, 1, mesh, oracle=False, workers=workers)
    sigma_c = corr.sigma if degree == 1 else project_rtn(corr.sigma, degree, mesh, quad_degree=2 * degree + 2)
    t3 = time.perf_counter()
    sigma = sigma_t + sigma_c
    target = weighted_div_target(config, f, xi, degree)
    fnorm = _data_norm(f, mesh)
    residuals = verify_flux(sigma, target, config.zero_faces, fnorm)
    residuals["correction"] = dict(corr.residuals)
    obj = flux_objective(sigma, xi, config.psi)
    timings.update(primal=t1 - t0, weighted_patches=t2 - t1, correction=t3 - t2)
    res = LiftResult("lift-weighted", sigma, residuals, obj, constant=config.constant(),
                     timings=timings, xi=xi, weight=config.psi)
    if oracle:
        t4 = time.perf_counter()
        res.oracle = dual_norm_oracle(data, mesh, degree + 3, tol=oracle_tol)
        timings["oracle"] = time.perf_counter() - t4
    return res
