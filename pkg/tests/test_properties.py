"""Randomised invariants checked with hypothesis."""

import numpy as np
from hypothesis import given, settings, strategies as st

from equiflux.equilibration import Equilibrator, verify_equilibration
from equiflux.linsolve import solve_saddle
from equiflux.mesh import hat_eval, structured_square, vertex_patch
from equiflux.oracles import kkt_oracle, random_saddle_system
from equiflux.polyspace import PiecewisePoly, RTNField, dim_p, dim_rtn, project_rtn, project_scalar
from equiflux.primal import ProblemData, solve_primal
from equiflux.problems import make_compatible

seeds = st.integers(0, 2**31 - 1)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(3, 60), st.booleans())
def test_saddle_matches_oracle(seed, n, mean):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, min(30, n - 1) + 1))
    s = random_saddle_system(rng, n, m, mean=mean)
    a, b = solve_saddle(s), kkt_oracle(s)
    assert np.abs(a.x - b.x).max() <= 1e-9 * np.abs(b.x).max(initial=1.0)


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 4), st.sampled_from(["right", "alternate", "random"]))
def test_partition_of_unity(seed, n, diagonal):
    mesh, part = structured_square(n, "D", diagonal=diagonal, perturb=0.2, seed=seed)
    rng = np.random.default_rng(seed)
    K = int(rng.integers(mesh.n_elements))
    x = rng.dirichlet(np.ones(3)) @ mesh.vertices[mesh.elements[K]]
    total = sum(hat_eval(vertex_patch(mesh, a, part), K, x)[0] for a in mesh.elements[K])
    assert abs(total - 1.0) <= 1e-14


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(0, 6))
def test_projections_idempotent(seed, p):
    mesh, _ = structured_square(2, "D", diagonal="random", perturb=0.2, seed=seed)
    rng = np.random.default_rng(seed)
    f = PiecewisePoly(mesh, p, rng.standard_normal((mesh.n_elements, dim_p(p))))
    assert np.abs(project_scalar(f, p, mesh).coeffs - f.coeffs).max() <= 1e-12
    v = RTNField(mesh, p, rng.standard_normal((mesh.n_elements, dim_rtn(p))))
    assert np.abs(project_rtn(v, p, mesh).coeffs - v.coeffs).max() <= 1e-10 * (1 + np.abs(v.coeffs).max())


@settings(max_examples=10, deadline=None)
@given(seeds, st.integers(1, 3), st.sampled_from(["D", "N", "mixed"]))
def test_equilibration_on_random_meshes(seed, p, bc):
    markers = {"D": "D", "N": "N", "mixed": lambda x, y: "N" if y > 0.99 else "D"}[bc]
    mesh, part = structured_square(3, markers, diagonal="random", perturb=0.2, seed=seed)
    rng = np.random.default_rng(seed)
    f = PiecewisePoly(mesh, p - 1, rng.standard_normal((mesh.n_elements, dim_p(p - 1))))
    if part.pure_neumann:
        f = make_compatible(mesh, f)
    data = ProblemData(f, None, part)
    sol = solve_primal(data, mesh, p)
    sigma, _ = Equilibrator(mesh, data, sol, p).flux(workers=1)
    rep = verify_equilibration(sigma, data)
    assert max(rep["div_residual_rel"], rep["max_interior_jump"], rep["max_neumann_trace"]) <= 1e-10
