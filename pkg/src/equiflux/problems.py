"""Registered manufactured problems and weight configurations.

Each :class:`ManufacturedProblem` knows how to build its :class:`ProblemData`
on a given mesh (possibly depending on the degree and a seed), plus the
exact gradient and the exact energy when they are available.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import BoundaryPartition, Mesh
from .polyspace import PiecewisePoly, RTNField, dim_p, dim_rtn, evaluate, field_degree, scalar_basis
from .primal import DofMap, H1Basis, ProblemData
from .quadrature import quad_rule

PI = np.pi
XI_CONST = np.array([0.3, -1.2])


@dataclass
class ManufacturedProblem:
    name: str
    description: str
    boundary: str  # "D", "N" or "mixed"
    make_data: Callable  # (mesh, partition, p, seed, data_degree) -> ProblemData
    exact_grad: Callable | None = None
    exact_energy: float | None = None
    exact_u: Callable | None = None

    def data(self, mesh: Mesh, p: int = 1, seed: int = 0, partition: BoundaryPartition | None = None,
             data_degree: int | None = None) -> ProblemData:
        """Problem data on ``mesh``; ``data_degree`` only affects seeded polynomial data."""
        if partition is None:
            partition = BoundaryPartition.uniform(mesh, "N" if self.boundary == "N" else "D")
        return self.make_data(mesh, partition, p, seed, data_degree)


# -- (a) sin-sin ------------------------------------------------------------------

def _sinsin_u(x, y):
    return np.sin(PI * x) * np.sin(PI * y)


def _sinsin_grad(x, y):
    return PI * np.cos(PI * x) * np.sin(PI * y), PI * np.sin(PI * x) * np.cos(PI * y)


def _sinsin_f(x, y):
    return 2 * PI**2 * np.sin(PI * x) * np.sin(PI * y)


SINSIN = ManufacturedProblem(
    "sinsin", "u = sin(pi x) sin(pi y), homogeneous Dirichlet", "D",
    lambda mesh, part, p, seed, dd: ProblemData(_sinsin_f, None, part),
    _sinsin_grad, PI / np.sqrt(2.0), _sinsin_u,
)


# -- (b) constant xi with pure Neumann boundary -----------------------------------

def _const_xi_data(mesh, part, p, seed, data_degree=None):
    return ProblemData(None, XI_CONST.copy(), part)


CONST_XI = ManufacturedProblem(
    "const-xi", "f = 0, xi = (0.3, -1.2), pure Neumann; u = -xi . x + const", "N",
    _const_xi_data,
    lambda x, y: (np.full_like(x, -XI_CONST[0]), np.full_like(x, -XI_CONST[1])),
    float(np.linalg.norm(XI_CONST)),  # on the unit square
    lambda x, y: -XI_CONST[0] * x - XI_CONST[1] * y,
)


# -- (c) seeded polynomial data ----------------------------------------------------

def random_poly_data(mesh: Mesh, degree: int, seed: int = 0) -> tuple[PiecewisePoly, RTNField]:
    """f in P_degree and xi in RTN_degree with standard normal coefficients."""
    if degree < 0:
        raise ValueError("data degree must be nonnegative")
    rng = np.random.default_rng(seed)
    f = PiecewisePoly(mesh, degree, rng.standard_normal((mesh.n_elements, dim_p(degree))))
    xi = RTNField(mesh, degree, rng.standard_normal((mesh.n_elements, dim_rtn(degree))))
    return f, xi


def make_compatible(mesh: Mesh, f: PiecewisePoly, weight=None, xi=None) -> PiecewisePoly:
    """Shift f by a constant so that (f, w) = (xi, grad w); w defaults to 1."""
    rule = quad_rule(2 * max(f.degree, field_degree(xi) or 0) + 2)
    fv = f.eval_at(None, rule.points)
    if weight is None:
        wv = np.ones_like(fv)
        gw = np.zeros((mesh.n_elements, 2))
    else:
        wv = weight.eval_at(None, rule.points)
        gw = weight.gradients()
    xv = evaluate(xi, mesh, rule.points, vector=True)
    lhs = mesh.detJ @ ((fv * wv) @ rule.weights)
    rhs = mesh.detJ @ (np.einsum("kqc,kc->kq", xv, gw) @ rule.weights)
    wint = mesh.detJ @ (wv @ rule.weights)
    alpha = (rhs - lhs) / wint
    phi0 = float(scalar_basis(0).values(np.array([[0.25, 0.25]]))[0, 0])
    c = f.coeffs.copy()
    c[:, 0] += alpha / phi0
    return PiecewisePoly(mesh, f.degree, c)


def _random_data(mesh, part, p, seed, data_degree=None):
    d = p - 1 if data_degree is None else data_degree
    f, xi = random_poly_data(mesh, d, seed)
    if part.pure_neumann:
        f = make_compatible(mesh, f)
    return ProblemData(f, xi, part)


RANDOM_POLY = ManufacturedProblem(
    "random-poly", "seeded f in P_{p-1}, xi in RTN_{p-1} (zero oscillation)", "D", _random_data,
)


# -- (d) polynomial bubble ---------------------------------------------------------

def _bubble_u(x, y):
    return x * (1 - x) * y * (1 - y)


def _bubble_grad(x, y):
    return (1 - 2 * x) * y * (1 - y), x * (1 - x) * (1 - 2 * y)


def _bubble_f(x, y):
    return 2 * (y * (1 - y) + x * (1 - x))


class _BubbleF:
    """-Delta of x(1-x)y(1-y), exposed as a degree-2 field for exact quadrature."""

    poly_degree = 2

    def __init__(self, mesh):
        self.mesh = mesh

    def eval_at(self, elements, xhat):
        X = self.mesh.map_points(xhat, elements)
        return _bubble_f(X[..., 0], X[..., 1])


BUBBLE = ManufacturedProblem(
    "bubble", "u = x(1-x)y(1-y), homogeneous Dirichlet", "D",
    lambda mesh, part, p, seed, dd: ProblemData(_BubbleF(mesh), None, part),
    _bubble_grad, float(np.sqrt(1.0 / 45.0)), _bubble_u,
)

PROBLEMS: dict[str, ManufacturedProblem] = {
    pr.name: pr for pr in (SINSIN, CONST_XI, RANDOM_POLY, BUBBLE)
}
# short aliases matching the registry letters
ALIASES = {"a": "sinsin", "b": "const-xi", "c": "random-poly", "d": "bubble"}


def get_problem(name: str) -> ManufacturedProblem:
    key = ALIASES.get(name, name)
    if key not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    return PROBLEMS[key]


# -- (e) weight configurations -----------------------------------------------------

WEIGHTS = ("one", "interior-hat", "bubble", "partial")


def weight_values(mesh: Mesh, kind: str) -> np.ndarray:
    """Vertex values of the piecewise affine weight psi.

    * ``one``: psi = 1, vanishes nowhere on the boundary;
    * ``interior-hat``: hat function of the interior vertex closest to the centre;
    * ``bubble``: nodal interpolant of 16 x (1-x) y (1-y), vanishing on the whole boundary;
    * ``partial``: 1 - x, vanishing on the side x = 1 only.
    """
    X = mesh.vertices
    if kind == "one":
        return np.ones(mesh.n_vertices)
    if kind == "interior-hat":
        inner = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices())
        if len(inner) == 0:
            raise ValueError("mesh has no interior vertex")
        a = inner[np.argmin(((X[inner] - 0.5) ** 2).sum(1))]
        w = np.zeros(mesh.n_vertices)
        w[a] = 1.0
        return w
    if kind == "bubble":
        return 16 * X[:, 0] * (1 - X[:, 0]) * X[:, 1] * (1 - X[:, 1])
    if kind == "partial":
        return 1.0 - X[:, 0]
    raise KeyError(f"unknown weight {kind!r}; choose from {WEIGHTS}")


# -- weak consistency check ----------------------------------------------------------

def consistency_residual(problem: ManufacturedProblem, mesh: Mesh, test_degree: int = 3,
                         p: int = 1, seed: int = 0) -> float:
    """max_v |(grad u, grad v) - (f, v) + (xi, grad v)| / ||grad v|| over a dense test set.

    The test set is the hierarchic basis of degree ``test_degree`` on
    ``mesh`` restricted to functions admissible for the boundary partition.
    Returns the maximum relative to the data scale.
    """
    if problem.exact_grad is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    part = BoundaryPartition.uniform(mesh, "N" if problem.boundary == "N" else "D")
    data = problem.data(mesh, p, seed, part)
    rule = quad_rule(2 * test_degree + 12)
    basis = H1Basis(test_degree)
    V, G = basis.eval(rule.points)
    dm = DofMap.build(mesh, test_degree)
    grad_v = np.einsum("kba,qib->kqia", mesh.Jinv, G) * dm.signs[:, None, :, None]
    vals = V[None] * dm.signs[:, None, :]
    gu = evaluate(problem.exact_grad, mesh, rule.points, vector=True)
    fv = evaluate(data.f, mesh, rule.points)
    xv = evaluate(data.xi, mesh, rule.points, vector=True)
    w = rule.weights * 1.0
    local = np.einsum("q,k,kqc,kqic->ki", w, mesh.detJ, gu + xv, grad_v) - np.einsum("q,k,kq,kqi->ki", w, mesh.detJ, fv, vals)
    r = np.zeros(dm.n_dofs)
    np.add.at(r, dm.local_dofs, local)
    norms_sq = np.zeros(dm.n_dofs)
    np.add.at(norms_sq, dm.local_dofs, np.einsum("q,k,kqic->ki", w, mesh.detJ, grad_v**2))
    keep = np.ones(dm.n_dofs, dtype=bool)
    if not part.pure_neumann:
        keep[dm.dirichlet_dofs(part)] = False
    scale = 1.0 + np.sqrt(mesh.detJ @ ((fv**2) @ w)) + np.sqrt(mesh.detJ @ (((gu + xv) ** 2).sum(-1) @ w))
    return float((np.abs(r[keep]) / np.sqrt(norms_sq[keep])).max() / scale)
