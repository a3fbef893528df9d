"""Dense symmetric-indefinite KKT solves and sparse SPD solves.

A :class:`SaddleSystem` encodes

    M x - B^T y = b
        B x     = c          (tested against the multiplier space)

optionally with the multiplier restricted to ``m . y = 0``. The restriction
is imposed by bordering with one extra unknown ``lam``::

    [  M   -B^T  0 ] [x  ]   [ b ]
    [ -B    0    m ] [y  ] = [-c ]
    [  0    m^T  0 ] [lam]   [ 0 ]

which keeps the matrix symmetric and nonsingular when the only nullspace of
``B^T`` is spanned by ``m``. ``lam`` vanishes for compatible data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError


@dataclass
class SaddleSystem:
    M: np.ndarray
    B: np.ndarray
    b: np.ndarray
    c: np.ndarray
    mean_row: np.ndarray | None = None

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        n, m = self.n, self.m
        if self.M.shape != (n, n) or self.B.shape != (m, n) or self.c.shape != (m,):
            raise ValueError("inconsistent saddle system shapes")
        if self.mean_row is not None:
            self.mean_row = np.asarray(self.mean_row, dtype=float).ravel()
            if self.mean_row.shape != (m,):
                raise ValueError("mean_row must have one entry per multiplier")
        asym = np.abs(self.M - self.M.T).max(initial=0.0)
        if asym > 1e-13 * max(np.abs(self.M).max(initial=0.0), 1.0):
            raise ValueError(f"M is not symmetric (max asymmetry {asym:.3e})")

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[0]

    def kkt_matrix(self) -> np.ndarray:
        n, m = self.n, self.m
        extra = 0 if self.mean_row is None else 1
        K = np.zeros((n + m + extra, n + m + extra))
        K[:n, :n] = self.M
        K[:n, n : n + m] = -self.B.T
        K[n : n + m, :n] = -self.B
        if extra:
            K[n : n + m, -1] = self.mean_row
            K[-1, n : n + m] = self.mean_row
        return K

    def residuals(self, x, y) -> tuple[float, float]:
        """Norms of M x - B^T y - b and of the constraint residual.

        With a mean row, the constraint residual is measured on the
        complement of ``mean_row`` (the equations actually imposed).
        """
        r1 = self.M @ x - self.B.T @ y - self.b
        r2 = self.B @ x - self.c
        if self.mean_row is not None:
            mr = self.mean_row
            r2 = r2 - mr * (mr @ r2) / (mr @ mr)
        return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))

    def scale(self) -> float:
        return 1.0 + max(np.abs(self.M).max(initial=0), np.abs(self.B).max(initial=0),
                         np.abs(self.b).max(initial=0), np.abs(self.c).max(initial=0))


@dataclass
class SaddleSolution:
    x: np.ndarray
    y: np.ndarray
    lam: float


def check_spd(M: np.ndarray) -> None:
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SolverError("mass block is not symmetric positive definite") from exc


def solve_saddle(system: SaddleSystem, check: bool = True) -> SaddleSolution:
    """Solve the KKT system with a Bunch-Kaufman (LDL^T) factorization."""
    if check:
        check_spd(system.M)
    n, m = system.n, system.m
    K = system.kkt_matrix()
    rhs = np.zeros(K.shape[0])
    rhs[:n] = system.b
    rhs[n : n + m] = -system.c
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            sol = sla.solve(K, rhs, assume_a="sym", check_finite=False)
    except (sla.LinAlgWarning, np.linalg.LinAlgError) as exc:
        raise SolverError(f"KKT matrix is singular or rank deficient: {exc}") from exc
    x, y = sol[:n], sol[n : n + m]
    lam = float(sol[-1]) if system.mean_row is not None else 0.0
    if check:
        r1, r2 = system.residuals(x, y)
        tol = 1e-10 * (system.scale() + np.abs(sol).max(initial=0.0))
        if max(r1, r2) > tol:
            raise SolverError(f"KKT residual {max(r1, r2):.3e} exceeds {tol:.3e}")
    return SaddleSolution(x, y, lam)


# -- sparse SPD ---------------------------------------------------------------------

@dataclass
class SparseSPD:
    A: sp.spmatrix
    mean_row: np.ndarray | None = None


def solve_spd(system: SparseSPD | sp.spmatrix, rhs, mean_row=None) -> np.ndarray:
    """Solve A x = rhs for sparse symmetric positive (semi)definite A.

    With ``mean_row`` the solution is constrained to ``mean_row . x = 0``
    via a bordered system, which handles the constant nullspace of a pure
    Neumann stiffness matrix.
    """
    if isinstance(system, SparseSPD):
        A, mean_row = system.A, system.mean_row if mean_row is None else mean_row
    else:
        A = system
    A = sp.csc_matrix(A, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or rhs.shape != (n,):
        raise ValueError("shape mismatch in solve_spd")
    if n == 0:
        return np.zeros(0)
    if mean_row is None:
        # symmetric ordering without pivoting: an LDL^T-like elimination whose
        # pivots are all positive exactly when A is SPD
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        piv = lu.U.diagonal()
        if np.any(piv <= 0.0) or not np.all(lu.perm_r == lu.perm_c):
            raise SolverError("non-SPD pivot encountered")
        x = lu.solve(rhs)
    else:
        mr = np.asarray(mean_row, dtype=float).ravel()
        K = sp.bmat([[A, sp.csc_matrix(mr[:, None])], [sp.csc_matrix(mr[None, :]), None]], format="csc")
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        x = lu.solve(np.append(rhs, 0.0))[:n]
    res = np.linalg.norm(A @ x - rhs) if mean_row is None else _projected_residual(A, x, rhs, mean_row)
    if not np.isfinite(res) or res > 1e-10 * max(np.linalg.norm(rhs), np.abs(A).max() * np.abs(x).max(initial=0.0), 1e-300):
        raise SolverError(f"sparse solve residual {res:.3e} too large")
    return x


def _projected_residual(A, x, rhs, mean_row):
    # the bordering unknown absorbs the component of rhs along mean_row
    r = A @ x - rhs
    mr = np.asarray(mean_row, dtype=float).ravel()
    return float(np.linalg.norm(r - mr * (mr @ r) / (mr @ mr)))
