"""Guaranteed a posteriori error estimates from an equilibrated flux.

For sigma in H(div) with div sigma = Pi_p f and sigma.n = 0 on Gamma_N,

    ||grad(u - u_h)||^2 <= sum_K ( ||sigma + xi + grad u_h||_K
                                   + h_K / pi ||f - Pi_p f||_K )^2

on convex elements. The per-vertex data oscillation

    osc_a^2 = sum_{K in T_a} h_K^2 / p^2 ||psi_a f - Pi_p(psi_a f)||_K^2
              + ||xi - Pi_p xi||_K^2 + ||psi_a xi - Pi^RTN_p(psi_a xi)||_K^2

enters the local efficiency bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh
from .polyspace import (
    RTNField,
    evaluate,
    field_degree,
    rtn_coeffs_from_values,
    rtn_tables,
    scalar_basis,
    scalar_coeffs_from_values,
)
from .primal import PrimalSolution, ProblemData
from .quadrature import quad_rule

# relative denominators below this count as "exact" (ratio not reported)
EXACT_TOL = 1e-14


def _deg(field_, fallback):
    d = field_degree(field_)
    return fallback if d is None else d


def element_estimator(sigma: RTNField, data: ProblemData, sol: PrimalSolution,
                      elements=None) -> tuple[np.ndarray, np.ndarray]:
    """Flux term ||sigma + xi + grad u_h||_K and oscillation h_K/pi ||f - Pi_p f||_K."""
    mesh, p = sigma.mesh, sigma.degree
    el = np.arange(mesh.n_elements) if elements is None else np.asarray(elements, dtype=np.int64)
    dx = _deg(data.xi, p + 4)
    rule = quad_rule(2 * max(p + 1, dx, sol.degree) + 2)
    v = sigma.eval_at(el, rule.points) + sol.grad_at(el, rule.points)
    v = v + evaluate(data.xi, mesh, rule.points, elements=el, vector=True)
    flux = np.sqrt(mesh.detJ[el] * ((v**2).sum(-1) @ rule.weights))
    df = _deg(data.f, p + 6)
    rule = quad_rule(p + max(df, p) + 2)
    fv = evaluate(data.f, mesh, rule.points, elements=el)
    phi = scalar_basis(p).values(rule.points)
    c = scalar_coeffs_from_values(fv, rule, p)
    r = fv - c @ phi.T
    osc = mesh.h[el] / np.pi * np.sqrt(mesh.detJ[el] * ((r**2) @ rule.weights))
    return flux, osc


def global_estimate(flux, osc, error: float | None = None, margin: float = 0.0) -> dict:
    """eta = sqrt(sum (flux_K + osc_K)^2) and, given the error, the bound verdict.

    The verdict is ``error * (1 + margin) <= eta`` so that uncertainty in a
    reference error counts against the bound.
    """
    eta = float(np.sqrt(((np.asarray(flux) + np.asarray(osc)) ** 2).sum()))
    out = {"eta": eta}
    if error is not None:
        out["error"] = float(error)
        out["margin"] = float(margin)
        out["bound_holds"] = bool(error * (1.0 + margin) <= eta)
        out["slack"] = eta - error * (1.0 + margin)
        out["efficiency_index"] = eta / error if error > 0 else float("inf")
    return out


def oscillation_terms(mesh: Mesh, data: ProblemData, p: int, elements=None):
    """The three oscillation contributions per element and vertex slot.

    Returns ``(t_f, t_xi, t_rtn)`` with shapes (n, 3), (n,), (n, 3): squared
    norms of h_K/p (lam_j f - Pi(lam_j f)), of xi - Pi xi, and of
    lam_j xi - Pi^RTN(lam_j xi) on each element.
    """
    el = np.arange(mesh.n_elements) if elements is None else np.asarray(elements, dtype=np.int64)
    n = len(el)
    df = _deg(data.f, p + 6)
    dx = _deg(data.xi, p + 6)
    rule = quad_rule(2 * (p + 1 + max(df, dx)))
    lam = rule.barycentric
    w = rule.weights
    det = mesh.detJ[el]
    phi = scalar_basis(p).values(rule.points)
    fv = evaluate(data.f, mesh, rule.points, elements=el)
    t_f = np.zeros((n, 3))
    for j in range(3):
        v = lam[None, :, j] * fv
        r = v - scalar_coeffs_from_values(v, rule, p) @ phi.T
        t_f[:, j] = det * ((r**2) @ w)
    t_f *= (mesh.h[el, None] / max(p, 1)) ** 2
    xv = evaluate(data.xi, mesh, rule.points, elements=el, vector=True)
    r = xv - np.einsum("kic,qi->kqc", scalar_coeffs_from_values(xv, rule, p), phi)
    t_xi = det * ((r**2).sum(-1) @ w)
    t_rtn = np.zeros((n, 3))
    psi, _ = rtn_tables(p).eval(rule.points)
    J = mesh.J[el]
    for j in range(3):
        v = lam[None, :, j, None] * xv
        c = rtn_coeffs_from_values(v, rule, p, mesh, el)
        pv = np.einsum("kab,qib,ki->kqa", J, psi, c) / det[:, None, None]
        t_rtn[:, j] = det * (((v - pv) ** 2).sum(-1) @ w)
    return t_f, t_xi, t_rtn


def vertex_oscillations(mesh: Mesh, data: ProblemData, p: int) -> np.ndarray:
    """osc_a for every vertex a."""
    t_f, t_xi, t_rtn = oscillation_terms(mesh, data, p)
    per_slot = t_f + t_rtn + t_xi[:, None]
    sq = np.bincount(mesh.elements.ravel(), weights=per_slot.ravel(), minlength=mesh.n_vertices)
    return np.sqrt(sq)


def vertex_oscillation(patch, data: ProblemData, p: int) -> float:
    """osc_a for the patch of one vertex."""
    t_f, t_xi, t_rtn = oscillation_terms(patch.mesh, data, p, patch.elements)
    j = patch.local_index
    rows = np.arange(len(j))
    return float(np.sqrt((t_f[rows, j] + t_xi + t_rtn[rows, j]).sum()))


def efficiency_ratios(flux, element_errors, mesh: Mesh, vertex_error, vertex_osc,
                      scale: float = 1.0) -> np.ndarray:
    """flux_K / sum_{a in V_K} (||grad(u - u_h)||_{omega_a} + osc_a).

    Elements whose denominator is at most ``EXACT_TOL * scale`` are marked
    exact and get NaN instead of a ratio.
    """
    denom = (np.asarray(vertex_error)[mesh.elements] + np.asarray(vertex_osc)[mesh.elements]).sum(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > EXACT_TOL * scale, np.asarray(flux) / denom, np.nan)
    return ratio


def patch_errors(mesh: Mesh, element_errors) -> np.ndarray:
    """||grad(u - u_h)||_{omega_a} from elementwise errors."""
    sq = np.repeat(np.asarray(element_errors) ** 2, 3)
    return np.sqrt(np.bincount(mesh.elements.ravel(), weights=sq, minlength=mesh.n_vertices))


@dataclass
class EstimatorReport:
    """Elementwise indicators plus optional reference error and efficiency data."""

    flux: np.ndarray
    osc: np.ndarray
    eta: float
    error: float | None = None
    element_errors: np.ndarray | None = None
    margin: float = 0.0
    vertex_osc: np.ndarray | None = None
    local_ratio: np.ndarray | None = None
    global_ratio: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def bound_holds(self) -> bool | None:
        if self.error is None:
            return None
        return bool(self.error * (1.0 + self.margin) <= self.eta)

    @property
    def efficiency_index(self) -> float | None:
        if self.error is None or self.error == 0:
            return None
        return self.eta / self.error

    def summary(self) -> dict:
        out = {
            "eta": self.eta,
            "error": self.error,
            "margin": self.margin,
            "bound_holds": self.bound_holds,
            "efficiency_index": self.efficiency_index,
            "global_ratio": self.global_ratio,
        }
        if self.local_ratio is not None:
            finite = self.local_ratio[np.isfinite(self.local_ratio)]
            out["max_local_ratio"] = float(finite.max()) if len(finite) else None
            out["n_exact_elements"] = int((~np.isfinite(self.local_ratio)).sum())
        out.update(self.info)
        return out

    def element_rows(self) -> list[dict]:
        rows = []
        for k in range(len(self.flux)):
            row = {"element": k, "flux": float(self.flux[k]), "osc": float(self.osc[k])}
            if self.element_errors is not None:
                row["error"] = float(self.element_errors[k])
            if self.local_ratio is not None:
                row["local_ratio"] = float(self.local_ratio[k])
            rows.append(row)
        return rows


def estimate(sigma: RTNField, data: ProblemData, sol: PrimalSolution, element_errors=None,
             margin: float = 0.0, with_efficiency: bool = False) -> EstimatorReport:
    """Assemble an :class:`EstimatorReport`; efficiency data need reference errors."""
    flux, osc = element_estimator(sigma, data, sol)
    g = global_estimate(flux, osc)
    rep = EstimatorReport(flux, osc, g["eta"], margin=margin)
    if element_errors is not None:
        element_errors = np.asarray(element_errors, dtype=float)
        rep.element_errors = element_errors
        rep.error = float(np.sqrt((element_errors**2).sum()))
        if with_efficiency:
            mesh = sigma.mesh
            vosc = vertex_oscillations(mesh, data, sigma.degree)
            verr = patch_errors(mesh, element_errors)
            rep.vertex_osc = vosc
            rep.local_ratio = efficiency_ratios(flux, element_errors, mesh, verr, vosc)
            total_flux = float(np.sqrt((flux**2).sum()))
            denom = rep.error + float(np.sqrt((vosc**2).sum()))
            rep.global_ratio = total_flux / denom if denom > EXACT_TOL else None
    return rep
