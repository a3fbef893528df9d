import numpy as np
import pytest

from equiflux.lifting import HatCombination
from equiflux.mesh import build_mesh, structured_square
from equiflux.polyspace import (
    PiecewisePoly,
    RTNField,
    dim_p,
    dim_rtn,
    divergence,
    evaluate,
    normal_trace,
    project_rtn,
    project_scalar,
    project_vector,
    rtn_mass_matrices,
    rtn_tables,
    scalar_basis,
)
from equiflux.quadrature import quad_rule


@pytest.fixture(scope="module")
def ref_mesh():
    mesh, _ = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], "D")
    return mesh


@pytest.fixture(scope="module")
def small_mesh():
    mesh, _ = structured_square(2, "D", diagonal="random", perturb=0.25, seed=3)
    return mesh


def test_dimensions():
    for p in range(7):
        assert dim_p(p) == (p + 1) * (p + 2) // 2
        assert dim_rtn(p) == (p + 1) * (p + 3)
        assert rtn_tables(p).dim == dim_rtn(p)


def test_scalar_basis_orthonormal():
    for p in range(9):
        r = quad_rule(2 * p)
        phi = scalar_basis(p).values(r.points)
        G = np.einsum("q,qi,qj->ij", r.weights, phi, phi)
        assert np.allclose(G, np.eye(dim_p(p)), atol=1e-12)


def test_rtn_mass_spd(small_mesh):
    for p in range(6):
        M = rtn_mass_matrices(small_mesh, p)
        eig = np.linalg.eigvalsh(M)
        assert eig.min() > 0
        assert (eig.max(1) / eig.min(1)).max() < 1e8


@pytest.mark.parametrize("p", range(7))
def test_project_scalar_idempotent(small_mesh, rng, p):
    f = PiecewisePoly(small_mesh, p, rng.standard_normal((small_mesh.n_elements, dim_p(p))))
    assert np.abs(project_scalar(f, p, small_mesh).coeffs - f.coeffs).max() <= 1e-13


def test_project_scalar_mean(ref_mesh):
    P = project_scalar(lambda x, y: x, 0, ref_mesh)
    assert P.eval_at(None, np.array([[0.2, 0.2]]))[0, 0] == pytest.approx(1 / 3, abs=1e-15)


def test_project_scalar_orthogonality(ref_mesh):
    f = lambda x, y: np.sin(np.pi * x)
    P = project_scalar(f, 2, ref_mesh, quad_degree=30)
    r = quad_rule(30)
    resid = evaluate(f, ref_mesh, r.points)[0] - P.eval_at(None, r.points)[0]
    phi = scalar_basis(2).values(r.points)
    assert np.abs((r.weights * resid) @ phi).max() <= 1e-12


def test_project_vector(small_mesh, rng):
    P = project_vector(np.array([1.5, -2.0]), 1, small_mesh)
    assert np.allclose(P.eval_at(None, np.array([[0.3, 0.1]])), [1.5, -2.0], atol=1e-14)
    v = PiecewisePoly(small_mesh, 2, rng.standard_normal((small_mesh.n_elements, 6, 2)))
    assert np.abs(project_vector(v, 2, small_mesh).coeffs - v.coeffs).max() <= 1e-13
    g = lambda x, y: (np.exp(x) * y, np.cos(3 * y))
    P = project_vector(g, 2, small_mesh, quad_degree=28)
    r = quad_rule(28)
    resid = evaluate(g, small_mesh, r.points, vector=True) - P.eval_at(None, r.points)
    phi = scalar_basis(2).values(r.points)
    assert np.abs(np.einsum("q,kqc,qi->kic", r.weights, resid, phi)).max() <= 1e-12


class _Product:
    def __init__(self, psi, xi):
        self.psi, self.xi = psi, xi

    def eval_at(self, elements, xhat):
        return self.psi.eval_at(elements, xhat)[..., None] * self.xi.eval_at(elements, xhat)


@pytest.mark.parametrize("p", [1, 2, 4])
def test_hat_times_rtn_is_reproduced(small_mesh, rng, p):
    xi = RTNField(small_mesh, p - 1, rng.standard_normal((small_mesh.n_elements, dim_rtn(p - 1))))
    w = np.zeros(small_mesh.n_vertices)
    w[4] = 1.0
    prod = _Product(HatCombination(small_mesh, w), xi)
    P = project_rtn(prod, p, small_mesh, quad_degree=2 * p + 4)
    r = quad_rule(2 * p + 4)
    diff = P.eval_at(None, r.points) - prod.eval_at(None, r.points)
    assert np.abs(diff).max() <= 1e-12


def test_project_rtn_zero_and_orthogonality(small_mesh):
    assert np.all(project_rtn(None, 2, small_mesh).coeffs == 0.0)
    g = lambda x, y: (np.sin(2 * x + y), x * np.exp(y))
    p, qd = 2, 26
    P = project_rtn(g, p, small_mesh, quad_degree=qd)
    r = quad_rule(qd)
    resid = evaluate(g, small_mesh, r.points, vector=True) - P.eval_at(None, r.points)
    for j in range(dim_rtn(p)):
        e = np.zeros((small_mesh.n_elements, dim_rtn(p)))
        e[:, j] = 1.0
        phi = RTNField(small_mesh, p, e).eval_at(None, r.points)
        inner = np.einsum("q,k,kqc,kqc->k", r.weights, small_mesh.detJ, resid, phi)
        assert np.abs(inner).max() <= 1e-12


def test_divergence_examples(ref_mesh, small_mesh):
    v = project_rtn(lambda x, y: (x / 2, y / 2), 0, ref_mesh)
    assert divergence(v).eval_at(None, np.array([[0.1, 0.7]]))[0, 0] == pytest.approx(1.0, abs=1e-13)
    c = project_rtn(np.array([2.0, -1.0]), 1, small_mesh)
    assert np.abs(divergence(c).coeffs).max() <= 1e-13


def test_divergence_matches_finite_differences(small_mesh, rng):
    p, K = 3, 2
    v = RTNField(small_mesh, p, rng.standard_normal((small_mesh.n_elements, dim_rtn(p))))
    A = small_mesh.vertices[small_mesh.elements[K]]
    J = np.column_stack([A[1] - A[0], A[2] - A[0]])
    xhat = np.array([[0.3, 0.25]])
    x0 = A[0] + J @ xhat[0]
    eps = 1e-6
    fd = 0.0
    for c in range(2):
        dx = np.zeros(2)
        dx[c] = eps
        pts = np.linalg.solve(J, np.array([x0 + dx - A[0], x0 - dx - A[0]]).T).T
        vals = v.eval_at(np.array([K]), pts)[0]
        fd += (vals[0, c] - vals[1, c]) / (2 * eps)
    exact = divergence(v).eval_at(np.array([K]), xhat)[0, 0]
    assert fd == pytest.approx(exact, abs=1e-8 * max(1.0, abs(exact)))


def test_normal_trace_hypotenuse(ref_mesh):
    v = project_rtn(lambda x, y: (x / 2, y / 2), 1, ref_mesh)
    mesh = ref_mesh
    hyp = [f for f in range(mesh.n_faces) if set(mesh.faces[f]) == {1, 2}][0]
    c = normal_trace(v, hyp)
    assert c[0] == pytest.approx(1 / (2 * np.sqrt(2)), abs=1e-14)
    assert np.abs(c[1:]).max() <= 1e-14
    assert np.all(normal_trace(RTNField.zeros(mesh, 2), hyp) == 0.0)
    with pytest.raises(ValueError):
        normal_trace(v, hyp, side=1)


@pytest.mark.parametrize("p", [0, 1, 3, 5])
def test_piola_divergence_theorem(small_mesh, p):
    mesh = small_mesh
    K = 3
    for j in range(dim_rtn(p)):
        c = np.zeros((mesh.n_elements, dim_rtn(p)))
        c[K, j] = 1.0
        v = RTNField(mesh, p, c)
        lhs = divergence(v).integrals()[K, 0]
        rhs = 0.0
        for f in mesh.element_faces[K]:
            side = 0 if mesh.face_elements[f, 0] == K else 1
            rhs += normal_trace(v, f, side)[0] * mesh.face_lengths[f]
        assert lhs == pytest.approx(rhs, abs=1e-12)
