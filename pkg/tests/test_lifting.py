import numpy as np
import pytest

from equiflux.errors import IncompatibleDataError, SolverError
from equiflux.lifting import (
    HatCombination,
    LiftResult,
    WeightedLiftConfig,
    flux_objective,
    lift,
    lift_weighted,
    stability_ratio,
    weighted_div_target,
)
from equiflux.mesh import BoundaryPartition, structured_square
from equiflux.oracles import OracleResult, divfree_noise
from equiflux.polyspace import PiecewisePoly, RTNField, dim_p, dim_rtn
from equiflux.problems import XI_CONST, make_compatible, random_poly_data, weight_values


@pytest.fixture(scope="module")
def mesh_d():
    return structured_square(4, "D", diagonal="alternate")


def test_zero_data_is_exact(mesh_d):
    mesh, part = mesh_d
    res = lift(None, None, part, 2)
    assert np.abs(res.sigma.coeffs).max() == 0.0
    st = stability_ratio(res)
    assert st["status"] == "exact" and st["ratio"] is None


def test_constant_xi_ratio_one():
    mesh, part = structured_square(4, "N")
    res = lift(None, XI_CONST, part, 1)
    assert res.feasible()
    assert np.abs(res.sigma.coeffs).max() <= 1e-10
    assert res.objective == pytest.approx(np.linalg.norm(XI_CONST), rel=1e-10)
    assert stability_ratio(res)["ratio"] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_f_one_dirichlet(mesh_d, p):
    mesh, part = mesh_d
    res = lift(PiecewisePoly(mesh, 0, np.full((mesh.n_elements, 1), np.sqrt(2.0))), None, part, p)
    assert res.feasible()
    st = stability_ratio(res)
    assert st["oracle_converged"]
    assert 1.0 <= st["ratio"] <= 1.5
    d = res.to_dict()
    assert d["stability"]["ratio"] == st["ratio"] and d["kind"] == "lift"


def test_noise_increases_ratio(mesh_d, rng):
    mesh, part = mesh_d
    res = lift(PiecewisePoly(mesh, 0, np.ones((mesh.n_elements, 1))), None, part, 2)
    noisy = res.with_flux(res.sigma + divfree_noise(mesh, 2, [], rng, scale=0.05))
    assert stability_ratio(noisy)["ratio"] > stability_ratio(res)["ratio"]


def test_argument_checks(mesh_d):
    mesh, part = mesh_d
    f2 = PiecewisePoly(mesh, 2, np.zeros((mesh.n_elements, dim_p(2))))
    with pytest.raises(ValueError, match="degree"):
        lift(f2, None, part, 2, oracle=False)
    with pytest.raises(ValueError):
        lift(None, None, part, 0)
    with pytest.raises(ValueError):
        lift(None, None, part, 1, pprime=2)


def test_incompatible_neumann():
    mesh, part = structured_square(3, "N")
    with pytest.raises(IncompatibleDataError, match="compatibility"):
        lift(PiecewisePoly(mesh, 0, np.ones((mesh.n_elements, 1))), None, part, 1)


def test_zero_oracle_nonzero_flux_raises(mesh_d):
    mesh, _ = mesh_d
    sigma = RTNField(mesh, 1, np.ones((mesh.n_elements, dim_rtn(1))))
    bad = LiftResult("lift", sigma, {}, flux_objective(sigma), OracleResult(0.0, 0.0, True, 1, 4))
    with pytest.raises(SolverError):
        stability_ratio(bad)


def test_hat_combination(mesh_d):
    mesh, _ = mesh_d
    w = weight_values(mesh, "partial")
    h = HatCombination(mesh, w)
    X = mesh.map_points(np.array([[0.2, 0.3]]), None)[:, 0]
    assert np.allclose(h.eval_at(None, np.array([[0.2, 0.3]]))[:, 0], 1 - X[:, 0], atol=1e-14)
    assert np.allclose(h.gradients(), [-1.0, 0.0], atol=1e-13)
    assert h.grad_max_norm() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        HatCombination(mesh, w[:-1])


def test_config_constant(mesh_d):
    mesh, _ = mesh_d
    one = WeightedLiftConfig(mesh, weight_values(mesh, "one"))
    assert len(one.zero_faces) == 0 and not one.pure_neumann
    assert one.constant()["C"] == pytest.approx(1.0)
    hat = WeightedLiftConfig(mesh, weight_values(mesh, "interior-hat"))
    assert hat.pure_neumann and hat.poincare_constant() == pytest.approx(1 / np.pi)
    c = hat.constant()
    assert c["C"] == pytest.approx(1.0 + c["grad_psi_sup"] * np.sqrt(2) / np.pi)
    part = WeightedLiftConfig(mesh, weight_values(mesh, "partial"))
    assert 0 < len(part.zero_faces) < len(mesh.boundary_faces)
    assert part.poincare_constant() == 1.0
    assert WeightedLiftConfig(mesh, weight_values(mesh, "one"), poincare=0.5).poincare_constant() == 0.5


def test_psi_one_degenerates_to_plain_lift(mesh_d):
    mesh, part = mesh_d
    f = PiecewisePoly(mesh, 0, np.ones((mesh.n_elements, 1)))
    res = lift_weighted(weight_values(mesh, "one"), f, None, 2, mesh, oracle=False)
    assert res.feasible()
    assert np.abs(res.sigma.divergence().coeffs[:, 0] - f.coeffs[:, 0]).max() <= 1e-11
    # the correction solve receives zero data
    plain = lift(f, None, part, 2, oracle=False)
    assert res.objective == pytest.approx(plain.objective, rel=1e-10)


def test_weighted_zero_data(mesh_d):
    mesh, _ = mesh_d
    res = lift_weighted(weight_values(mesh, "bubble"), None, None, 2, mesh)
    assert np.abs(res.sigma.coeffs).max() <= 1e-15
    assert stability_ratio(res)["status"] == "exact"


@pytest.mark.parametrize("kind", ["interior-hat", "bubble", "partial"])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_weighted_constraints(mesh_d, kind, p):
    mesh, _ = mesh_d
    w = weight_values(mesh, kind)
    f, xi = random_poly_data(mesh, p - 1, seed=11)
    cfg = WeightedLiftConfig(mesh, w)
    if cfg.pure_neumann:
        f = make_compatible(mesh, f, cfg.psi, xi)
    res = lift_weighted(cfg, f, xi, p, mesh, oracle=False)
    assert res.feasible(), res.residuals
    assert res.residuals["correction"]["div_residual_rel"] <= 1e-10
    # the divergence target is psi f - grad psi . xi, exactly representable in P_p
    tgt = weighted_div_target(cfg, f, xi, p)
    assert np.abs(res.sigma.divergence().coeffs - tgt.coeffs).max() <= 1e-10 * (1 + np.abs(tgt.coeffs).max())


def test_weighted_compatibility_trigger(mesh_d):
    mesh, _ = mesh_d
    cfg = WeightedLiftConfig(mesh, weight_values(mesh, "interior-hat"))
    f, xi = random_poly_data(mesh, 1, seed=2)
    g = make_compatible(mesh, f, cfg.psi, xi)
    assert abs(cfg.check_compatible(g, xi)) <= 1e-12
    lift_weighted(cfg, g, xi, 2, mesh, oracle=False)
    bumped = g + PiecewisePoly(mesh, 0, np.full((mesh.n_elements, 1), 1e-6))
    with pytest.raises(IncompatibleDataError, match="compatibility"):
        lift_weighted(cfg, bumped, xi, 2, mesh, oracle=False)
    # weights that leave part of the boundary free never trigger
    WeightedLiftConfig(mesh, weight_values(mesh, "partial")).check_compatible(f, xi)


def test_weighted_ratio(mesh_d):
    mesh, _ = mesh_d
    cfg = WeightedLiftConfig(mesh, weight_values(mesh, "bubble"))
    f, xi = random_poly_data(mesh, 1, seed=3)
    f = make_compatible(mesh, f, cfg.psi, xi)
    res = lift_weighted(cfg, f, xi, 2, mesh)
    st = stability_ratio(res)
    assert st["status"] == "ok"
    assert 0 < st["normalized_ratio"] <= st["ratio"] <= 10


def test_dirichlet_partition_for_weighted_correction(mesh_d):
    mesh, _ = mesh_d
    cfg = WeightedLiftConfig(mesh, weight_values(mesh, "partial"))
    np.testing.assert_array_equal(np.sort(cfg.neumann_partition.neumann_faces), np.sort(cfg.zero_faces))
    assert isinstance(cfg.neumann_partition, BoundaryPartition)
