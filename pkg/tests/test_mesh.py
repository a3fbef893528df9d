import numpy as np
import pytest

from equiflux.errors import MeshError
from equiflux.mesh import (
    BoundaryPartition,
    ancestor_map,
    build_mesh,
    classify_vertices,
    hat_eval,
    read_mesh,
    refine_uniform,
    side_markers,
    structured_square,
    vertex_patch,
    write_mesh,
)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_reference_triangle():
    mesh, part = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], "D")
    assert mesh.n_elements == 1 and len(mesh.boundary_faces) == 3
    assert mesh.h[0] == pytest.approx(np.sqrt(2))
    assert part.pure_dirichlet


def test_two_element_square():
    mesh, _ = build_mesh(UNIT_SQUARE, [[0, 1, 2], [0, 2, 3]], "D")
    assert mesh.n_elements == 2
    assert (~mesh.is_boundary_face).sum() == 1
    assert len(mesh.boundary_faces) == 4


def test_orientation_normalized():
    mesh, _ = build_mesh(UNIT_SQUARE, [[0, 2, 1], [0, 3, 2]], "D")
    assert np.all(mesh.detJ > 0)


@pytest.mark.parametrize("elements, message", [
    ([[0, 1, 2], [0, 1, 3], [0, 1, 4]], "non-conforming"),
    ([[0, 1, 2], [2, 1, 0]], "duplicate"),
    ([[0, 1, 1]], "zero-area"),
])
def test_invalid_connectivity(elements, message):
    verts = [[0, 0], [1, 0], [0, 1], [1, -1], [0.5, -2]]
    with pytest.raises(MeshError, match=message):
        build_mesh(verts, elements, "D")


def test_collinear_element_rejected():
    with pytest.raises(MeshError, match="zero-area"):
        build_mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], "D")


def test_unmarked_boundary_face():
    with pytest.raises(MeshError, match="unmarked"):
        build_mesh(UNIT_SQUARE, [[0, 1, 2], [0, 2, 3]], {(0, 1): "D"})


def test_vertex_classes():
    mesh, part = structured_square(3, "D")
    corners = [i for i, v in enumerate(mesh.vertices) if v[0] in (0, 1) and v[1] in (0, 1)]
    assert not classify_vertices(mesh, part)[corners].any()
    assert classify_vertices(mesh, BoundaryPartition.uniform(mesh, "N")).all()
    mesh, part = structured_square(3, side_markers(left="D", default="N"))
    cls = classify_vertices(mesh, part)
    x = mesh.vertices[:, 0]
    assert not cls[x == 0].any()
    assert cls[x > 0].all()


def test_patches():
    mesh, part = structured_square(3, "D")
    cls = classify_vertices(mesh, part)
    # each element lies in exactly three patches
    count = np.zeros(mesh.n_elements, dtype=int)
    for a in range(mesh.n_vertices):
        pt = vertex_patch(mesh, a, part)
        count[pt.elements] += 1
        assert set(pt.elements) == set(np.flatnonzero((mesh.elements == a).any(1)))
        assert not np.any(mesh.faces[pt.gamma_faces] == a)
        if cls[a]:
            assert set(pt.gamma_faces) == set(pt.faces)
    assert np.all(count == 3)


def test_corner_patch_with_one_element():
    mesh, part = structured_square(2, "D", diagonal="right")
    # vertex (1, 0) has a single incident element for this diagonal
    a = int(np.flatnonzero((mesh.vertices == [1.0, 0.0]).all(1))[0])
    pt = vertex_patch(mesh, a, part)
    assert pt.n_elements == 1 and len(pt.faces) == 3 and len(pt.gamma_faces) == 1


def test_boundary_vertex_gamma_omits_faces_with_a():
    mesh, part = structured_square(3, "D")
    a = int(np.flatnonzero((np.abs(mesh.vertices - [1 / 3, 0.0]) < 1e-12).all(1))[0])
    pt = vertex_patch(mesh, a, part)
    with_a = [f for f in pt.faces if a in mesh.faces[f]]
    assert len(with_a) == 2
    assert set(pt.gamma_faces) == set(pt.faces) - set(with_a)


def test_hat_functions(rng):
    mesh, part = structured_square(3, "D", diagonal="random", perturb=0.2, seed=2)
    K = 5
    a = mesh.elements[K, 0]
    pt = vertex_patch(mesh, a, part)
    assert hat_eval(pt, K, mesh.vertices[a])[0] == pytest.approx(1.0)
    assert hat_eval(pt, K, mesh.vertices[mesh.elements[K]].mean(0))[0] == pytest.approx(1 / 3)
    with pytest.raises(MeshError):
        hat_eval(pt, int(np.setdiff1d(np.arange(mesh.n_elements), pt.elements)[0]), [0.5, 0.5])
    # partition of unity at random points in random elements
    worst = 0.0
    for _ in range(1000):
        K = int(rng.integers(mesh.n_elements))
        lam = rng.dirichlet(np.ones(3))
        x = lam @ mesh.vertices[mesh.elements[K]]
        s = sum(hat_eval(vertex_patch(mesh, b, part), K, x)[0] for b in mesh.elements[K])
        worst = max(worst, abs(s - 1.0))
    assert worst <= 1e-14


def test_gamma_faces_where_hat_vanishes():
    mesh, part = structured_square(3, "N")
    for a in mesh.boundary_vertices():
        pt = vertex_patch(mesh, a, part)
        for f in pt.gamma_faces:
            K = pt.elements[np.flatnonzero((mesh.element_faces[pt.elements] == f).any(1))[0]]
            for v in mesh.faces[f]:
                assert hat_eval(pt, K, mesh.vertices[v])[0] == pytest.approx(0.0, abs=1e-15)


def test_refine_uniform():
    mesh, part = build_mesh(UNIT_SQUARE, [[0, 1, 2], [0, 2, 3]], side_markers(left="N", default="D"))
    fine = refine_uniform(mesh)
    assert fine.n_elements == 8
    assert fine.h.max() == pytest.approx(mesh.h.max() / 2)
    assert fine.shape_regularity == pytest.approx(mesh.shape_regularity, rel=1e-12)
    fpart = part.refine(fine)
    mids = fine.vertices[fine.faces[fpart.neumann_faces]].mean(1)
    assert np.allclose(mids[:, 0], 0.0) and len(mids) == 2


def test_ancestor_map_points():
    mesh, _ = structured_square(2, "D", perturb=0.2, seed=1)
    fine = refine_uniform(refine_uniform(mesh))
    anc, A, b = ancestor_map(fine, mesh)
    xh = np.array([0.2, 0.3])
    xf = fine.map_points(xh[None], None)[:, 0]
    xc = np.einsum("kab,b->ka", A, xh) + b
    coarse_pts = np.stack([mesh.map_points(xc[k][None], np.array([anc[k]]))[0, 0] for k in range(fine.n_elements)])
    assert np.allclose(xf, coarse_pts, atol=1e-14)


def test_round_trip(tmp_path):
    mesh, part = structured_square(3, side_markers(top="N", default="D"), diagonal="random", perturb=0.1, seed=4)
    write_mesh(tmp_path / "m", mesh, part)
    m2, p2 = read_mesh(tmp_path / "m")
    assert np.array_equal(m2.elements, mesh.elements)
    assert np.array_equal(m2.vertices, mesh.vertices)
    assert np.array_equal(p2.dirichlet, part.dirichlet)


def test_disconnected_partition_warns():
    with pytest.warns(UserWarning, match="connected"):
        structured_square(2, side_markers(left="N", right="N", default="D"))
