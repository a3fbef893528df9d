"""Conforming triangular meshes, boundary partitions and vertex patches.

Local conventions used throughout the package:

* elements are stored counterclockwise, the affine map is
  ``x = v0 + J @ xhat`` with ``J = [v1 - v0, v2 - v0]``;
* local face ``i`` is opposite local vertex ``i`` and runs from local vertex
  ``(i + 1) % 3`` to ``(i + 2) % 3``;
* a global face is stored as ``(a, b)`` with ``a < b``; its global normal
  points to the right of the direction ``a -> b``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import MeshError

DIRICHLET = "D"
NEUMANN = "N"

# reference vertex coordinates and barycentric gradients
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_GRAD_LAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
LOCAL_FACES = np.array([[1, 2], [2, 0], [0, 1]])


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """Immutable conforming triangulation with derived topology and geometry.

    Attributes of interest: ``vertices`` (nV, 2), ``elements`` (nK, 3),
    ``faces`` (nF, 2), ``face_elements`` (nF, 2) with -1 for a missing
    neighbour, ``element_faces`` (nK, 3), ``J``, ``detJ``, ``h``.
    """

    def __init__(self, vertices, elements, *, parent=None, parent_of=None,
                 child_maps=None, face_parent=None):
        vertices = np.asarray(vertices, dtype=float)
        elements = np.asarray(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (n, 2)")
        if elements.ndim != 2 or elements.shape[1] != 3 or len(elements) == 0:
            raise MeshError("need at least one element given as vertex triples")
        if elements.min() < 0 or elements.max() >= len(vertices):
            raise MeshError("element vertex index out of range")
        if np.any(np.sort(elements, axis=1)[:, :-1] == np.sort(elements, axis=1)[:, 1:]):
            raise MeshError("element with repeated vertex (zero-area element)")

        e = elements.copy()
        p0, p1, p2 = (vertices[e[:, i]] for i in range(3))
        cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
        scale = np.maximum(np.abs(p1 - p0).max(axis=1), np.abs(p2 - p0).max(axis=1)) ** 2
        if np.any(np.abs(cross) <= 1e-14 * scale):
            raise MeshError("zero-area element")
        flip = cross < 0
        e[flip] = e[flip][:, [0, 2, 1]]

        key = np.sort(e, axis=1)
        _, counts = np.unique(key, axis=0, return_counts=True)
        if np.any(counts > 1):
            raise MeshError("duplicate element")

        self.vertices = _frozen(vertices)
        self.elements = _frozen(e)
        self._build_faces()
        self._build_geometry()
        self._build_vertex_adjacency()

        # refinement bookkeeping (only set by refine_uniform)
        self.parent = parent
        self.parent_of = None if parent_of is None else _frozen(parent_of)
        self.child_maps = child_maps
        self.face_parent = None if face_parent is None else _frozen(face_parent)

    # -- construction helpers -------------------------------------------------
    def _build_faces(self):
        e = self.elements
        nK = len(e)
        loc = e[:, LOCAL_FACES]  # (nK, 3, 2)
        pairs = np.sort(loc.reshape(-1, 2), axis=1)
        faces, inv, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if np.any(counts > 2):
            raise MeshError("non-conforming connectivity: an edge is shared by more than 2 elements")
        nF = len(faces)
        face_elements = -np.ones((nF, 2), dtype=np.int64)
        elem_ids = np.repeat(np.arange(nK), 3)
        order = np.argsort(inv, kind="stable")
        sorted_faces = inv[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_faces[1:] != sorted_faces[:-1]
        face_elements[sorted_faces[first], 0] = elem_ids[order[first]]
        face_elements[sorted_faces[~first], 1] = elem_ids[order[~first]]

        # two elements sharing a face must traverse it in opposite directions
        start = loc.reshape(-1, 2)[:, 0]
        same = start == faces[inv, 0]
        interior = counts[inv] == 2
        s = np.zeros(nF, dtype=np.int64)
        np.add.at(s, inv[interior], same[interior].astype(np.int64))
        if np.any(s[counts == 2] != 1):
            raise MeshError("non-conforming connectivity: inconsistent orientation across an edge")

        self.faces = _frozen(faces)
        self.face_elements = _frozen(face_elements)
        self.element_faces = _frozen(inv.reshape(nK, 3))
        # +1 if local face runs a -> b (same as global orientation), else -1
        self.face_orientation = _frozen(np.where(same, 1, -1).reshape(nK, 3))
        self.boundary_faces = _frozen(np.flatnonzero(counts == 1))
        self.is_boundary_face = _frozen(counts == 1)

    def _build_geometry(self):
        v, e = self.vertices, self.elements
        p0, p1, p2 = v[e[:, 0]], v[e[:, 1]], v[e[:, 2]]
        J = np.stack([p1 - p0, p2 - p0], axis=2)  # columns
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / det
        Jinv[:, 1, 1] = J[:, 0, 0] / det
        Jinv[:, 0, 1] = -J[:, 0, 1] / det
        Jinv[:, 1, 0] = -J[:, 1, 0] / det
        edges = np.stack([
            np.linalg.norm(p2 - p1, axis=1),
            np.linalg.norm(p0 - p2, axis=1),
            np.linalg.norm(p1 - p0, axis=1),
        ], axis=1)
        self.origin = _frozen(p0)
        self.J = _frozen(J)
        self.detJ = _frozen(det)
        self.Jinv = _frozen(Jinv)
        self.area = _frozen(0.5 * det)
        self.edge_lengths = _frozen(edges)
        self.h = _frozen(edges.max(axis=1))
        self.inradius = _frozen(det / edges.sum(axis=1))
        # grad lambda_j = J^{-T} grad_ref lambda_j
        self.grad_lambda = _frozen(np.einsum("kba,jb->kja", Jinv, REF_GRAD_LAMBDA))
        fv = self.vertices[self.faces]
        self.face_lengths = _frozen(np.linalg.norm(fv[:, 1] - fv[:, 0], axis=1))
        t = fv[:, 1] - fv[:, 0]
        self.face_normals = _frozen(np.stack([t[:, 1], -t[:, 0]], axis=1) / self.face_lengths[:, None])

    def _build_vertex_adjacency(self):
        nV = len(self.vertices)
        flat = self.elements.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=nV)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        self._v2e_ptr = _frozen(ptr)
        self._v2e = _frozen(order // 3)
        self._v2e_local = _frozen(order % 3)

    # -- queries ----------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def shape_regularity(self) -> float:
        return float(np.max(self.h / self.inradius))

    @property
    def diameter(self) -> float:
        v = self.vertices
        d = v[:, None, :] - v[None, :, :] if len(v) <= 4000 else None
        if d is None:
            from scipy.spatial import ConvexHull
            hull = v[ConvexHull(v).vertices]
            d = hull[:, None, :] - hull[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    @property
    def domain_area(self) -> float:
        return float(self.area.sum())

    def vertex_elements(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Elements containing vertex ``a`` and the local index of ``a`` in each."""
        s, t = self._v2e_ptr[a], self._v2e_ptr[a + 1]
        return self._v2e[s:t], self._v2e_local[s:t]

    def map_points(self, xhat, elements=None) -> np.ndarray:
        """Physical images of reference points; xhat is (nq, 2) or (n, nq, 2)."""
        idx = slice(None) if elements is None else elements
        xhat = np.asarray(xhat, dtype=float)
        J, o = self.J[idx], self.origin[idx]
        if xhat.ndim == 2:
            return o[:, None, :] + np.einsum("kab,qb->kqa", J, xhat)
        return o[:, None, :] + np.einsum("kab,kqb->kqa", J, xhat)

    def barycentric(self, element: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xhat = self.Jinv[element] @ (x - self.origin[element])
        return np.array([1.0 - xhat[0] - xhat[1], xhat[0], xhat[1]])

    def is_convex(self, tol: float = 1e-12) -> bool:
        from scipy.spatial import ConvexHull
        hull_area = ConvexHull(self.vertices).volume
        return abs(hull_area - self.domain_area) <= tol * max(hull_area, 1.0)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.faces[self.boundary_faces])


@dataclass(frozen=True)
class BoundaryPartition:
    """Dirichlet/Neumann marker for every boundary face of ``mesh``."""

    mesh: Mesh
    dirichlet: np.ndarray  # bool per face; only meaningful on boundary faces

    def __post_init__(self):
        d = np.zeros(self.mesh.n_faces, dtype=bool)
        d[self.mesh.boundary_faces] = np.asarray(self.dirichlet, dtype=bool)[self.mesh.boundary_faces]
        d.setflags(write=False)
        object.__setattr__(self, "dirichlet", d)

    @classmethod
    def uniform(cls, mesh: Mesh, marker: str) -> "BoundaryPartition":
        if marker not in (DIRICHLET, NEUMANN):
            raise MeshError(f"unknown boundary marker {marker!r}")
        return cls(mesh, np.full(mesh.n_faces, marker == DIRICHLET))

    @classmethod
    def from_faces(cls, mesh: Mesh, neumann_faces) -> "BoundaryPartition":
        """Everything Dirichlet except the listed boundary faces."""
        d = np.ones(mesh.n_faces, dtype=bool)
        d[np.asarray(neumann_faces, dtype=np.int64)] = False
        return cls(mesh, d)

    @property
    def dirichlet_faces(self) -> np.ndarray:
        return np.flatnonzero(self.dirichlet)

    @property
    def neumann_faces(self) -> np.ndarray:
        b = self.mesh.boundary_faces
        return b[~self.dirichlet[b]]

    @property
    def pure_neumann(self) -> bool:
        return not self.dirichlet.any()

    @property
    def pure_dirichlet(self) -> bool:
        return bool(self.dirichlet[self.mesh.boundary_faces].all())

    def marker(self, face: int) -> str:
        if not self.mesh.is_boundary_face[face]:
            raise MeshError(f"face {face} is not a boundary face")
        return DIRICHLET if self.dirichlet[face] else NEUMANN

    def refine(self, fine: Mesh) -> "BoundaryPartition":
        """Markers on a uniformly refined mesh, inherited from the parent faces."""
        if fine.parent is not self.mesh:
            raise MeshError("fine mesh is not a refinement of this partition's mesh")
        d = np.zeros(fine.n_faces, dtype=bool)
        b = fine.boundary_faces
        d[b] = self.dirichlet[fine.face_parent[b]]
        return BoundaryPartition(fine, d)

    def check_connected(self) -> bool:
        """True if Gamma_D and Gamma_N each have at most one connected component."""
        ok = True
        for faces in (self.dirichlet_faces, self.neumann_faces):
            if _n_components(self.mesh.faces[faces]) > 1:
                ok = False
        return ok


def _n_components(edges: np.ndarray) -> int:
    if len(edges) == 0:
        return 0
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    nodes, inv = np.unique(edges, return_inverse=True)
    inv = inv.reshape(edges.shape)
    g = coo_matrix((np.ones(len(edges)), (inv[:, 0], inv[:, 1])), shape=(len(nodes), len(nodes)))
    return connected_components(g, directed=False)[0]


Markers = str | Mapping | Callable


def build_mesh(vertices, element_triples, boundary_markers: Markers) -> tuple[Mesh, BoundaryPartition]:
    """Build a mesh and its boundary partition.

    ``boundary_markers`` is either a single marker (``"D"`` or ``"N"``) for
    the whole boundary, a mapping ``{(v1, v2): marker}`` keyed by boundary
    edges in either orientation, or a callable ``marker(xmid, ymid)``
    evaluated at boundary face midpoints.
    """
    mesh = Mesh(vertices, element_triples)
    b = mesh.boundary_faces
    d = np.zeros(mesh.n_faces, dtype=bool)
    if isinstance(boundary_markers, str):
        labels = [boundary_markers] * len(b)
    elif callable(boundary_markers):
        mid = mesh.vertices[mesh.faces[b]].mean(axis=1)
        labels = [boundary_markers(x, y) for x, y in mid]
    else:
        lookup = {tuple(sorted(map(int, k))): v for k, v in boundary_markers.items()}
        labels = []
        for f in b:
            key = tuple(int(i) for i in mesh.faces[f])
            if key not in lookup:
                raise MeshError(f"unmarked boundary face {key}")
            labels.append(lookup[key])
    for f, lab in zip(b, labels):
        if lab not in (DIRICHLET, NEUMANN):
            raise MeshError(f"unknown boundary marker {lab!r}")
        d[f] = lab == DIRICHLET
    part = BoundaryPartition(mesh, d)
    if not part.check_connected():
        warnings.warn("Gamma_D or Gamma_N has more than one connected component", stacklevel=2)
    return mesh, part


def classify_vertices(mesh: Mesh, partition: BoundaryPartition) -> np.ndarray:
    """Boolean array, True for vertices in V_int (interior or Neumann-only).

    A vertex is a Dirichlet vertex iff it lies on the closure of Gamma_D.
    """
    is_int = np.ones(mesh.n_vertices, dtype=bool)
    dfaces = partition.dirichlet_faces
    if len(dfaces):
        is_int[mesh.faces[dfaces].ravel()] = False
    return is_int


@dataclass(frozen=True)
class Patch:
    """Vertex patch omega_a.

    ``faces`` lists the faces of the boundary of omega_a, ``gamma_faces`` the
    subset not containing ``center`` (where the hat function vanishes),
    ``inner_faces`` the faces shared by two patch elements.
    """

    mesh: Mesh
    center: int
    elements: np.ndarray
    local_index: np.ndarray
    interior_vertex: bool  # class V_int w.r.t. the partition
    faces: np.ndarray
    gamma_faces: np.ndarray
    dirichlet_faces: np.ndarray
    inner_faces: np.ndarray
    diameter: float = field(default=0.0)

    @property
    def n_elements(self) -> int:
        return len(self.elements)


def vertex_patch(mesh: Mesh, a: int, partition: BoundaryPartition | None = None,
                 vertex_class: np.ndarray | None = None) -> Patch:
    elems, loc = mesh.vertex_elements(a)
    if partition is None:
        partition = BoundaryPartition.uniform(mesh, DIRICHLET)
    if vertex_class is None:
        interior = bool(classify_vertices(mesh, partition)[a])
    else:
        interior = bool(vertex_class[a])
    fids = mesh.element_faces[elems].ravel()
    uniq, counts = np.unique(fids, return_counts=True)
    boundary = uniq[counts == 1]
    inner = uniq[counts == 2]
    has_a = np.any(mesh.faces[boundary] == a, axis=1)
    gamma = boundary[~has_a]
    dfaces = boundary[partition.dirichlet[boundary]]
    pts = mesh.vertices[np.unique(mesh.elements[elems])]
    diam = float(np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)).max())
    arr = lambda x: _frozen(np.asarray(x, dtype=np.int64))
    return Patch(mesh, int(a), arr(elems), arr(loc), interior, arr(boundary),
                 arr(gamma), arr(dfaces), arr(inner), diam)


def hat_eval(patch: Patch, element: int, x) -> tuple[float, np.ndarray]:
    """Value and (elementwise constant) gradient of psi_a at x in K."""
    hit = np.flatnonzero(patch.elements == element)
    if len(hit) == 0:
        raise MeshError(f"element {element} is not in the patch of vertex {patch.center}")
    j = int(patch.local_index[hit[0]])
    lam = patch.mesh.barycentric(element, x)
    return float(lam[j]), patch.mesh.grad_lambda[element, j].copy()


# -- refinement and generators -------------------------------------------------

# children of the reference triangle: vertices in parent reference coordinates
_CHILD_REF = np.array([
    [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]],
    [[0.5, 0.0], [1.0, 0.0], [0.5, 0.5]],
    [[0.0, 0.5], [0.5, 0.5], [0.0, 1.0]],
    [[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]],
])


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into 4 similar triangles."""
    nV, nF = mesh.n_vertices, mesh.n_faces
    mids = mesh.vertices[mesh.faces].mean(axis=1)
    verts = np.vstack([mesh.vertices, mids])
    e = mesh.elements
    m = nV + mesh.element_faces  # midpoint of face opposite local vertex i
    children = np.stack([
        np.stack([e[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], e[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], e[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ], axis=1).reshape(-1, 3)
    parent_of = np.repeat(np.arange(mesh.n_elements), 4)
    A = np.stack([_CHILD_REF[:, 1] - _CHILD_REF[:, 0], _CHILD_REF[:, 2] - _CHILD_REF[:, 0]], axis=2)
    A = np.tile(A, (mesh.n_elements, 1, 1))
    b = np.tile(_CHILD_REF[:, 0], (mesh.n_elements, 1))
    fine = Mesh(verts, children, parent=mesh, parent_of=parent_of, child_maps=(A, b))
    # parent face of each fine boundary face: the coarse face whose midpoint is an endpoint
    fp = -np.ones(fine.n_faces, dtype=np.int64)
    fb = fine.faces[fine.boundary_faces]
    hi = fb.max(axis=1)  # midpoint vertex has index >= nV
    fp[fine.boundary_faces] = hi - nV
    fine.face_parent = _frozen(fp)
    if np.any(fp[fine.boundary_faces] < 0) or np.any(fp[fine.boundary_faces] >= nF):
        raise MeshError("refinement bookkeeping failed")
    return fine


def ancestor_map(fine: Mesh, coarse: Mesh):
    """Map fine elements into an ancestor mesh.

    Returns ``(ancestor, A, b)`` such that the reference point ``xhat`` of fine
    element ``k`` corresponds to ``A[k] @ xhat + b[k]`` in the reference frame
    of coarse element ``ancestor[k]``.
    """
    anc = np.arange(fine.n_elements)
    A = np.tile(np.eye(2), (fine.n_elements, 1, 1))
    b = np.zeros((fine.n_elements, 2))
    m = fine
    while m is not coarse:
        if m.parent is None:
            raise MeshError("coarse mesh is not an ancestor of the fine mesh")
        cA, cb = m.child_maps
        A = np.einsum("kab,kbc->kac", cA[anc], A)
        b = np.einsum("kab,kb->ka", cA[anc], b) + cb[anc]
        anc = m.parent_of[anc]
        m = m.parent
    return anc, A, b


def side_markers(**sides: str) -> Callable:
    """Marker callable for axis-aligned boxes.

    ``side_markers(left="D", default="N")`` marks faces on the minimal-x side
    Dirichlet and everything else Neumann. Sides: left, right, bottom, top.
    The box is taken as [0, 1]^2 unless ``box=(x0, x1, y0, y1)`` is given.
    """
    default = sides.pop("default", DIRICHLET)
    box = sides.pop("box", (0.0, 1.0, 0.0, 1.0))
    x0, x1, y0, y1 = box
    tol = 1e-10 * max(x1 - x0, y1 - y0)

    def marker(x, y):
        for name, hit in (("left", abs(x - x0) < tol), ("right", abs(x - x1) < tol),
                          ("bottom", abs(y - y0) < tol), ("top", abs(y - y1) < tol)):
            if hit and name in sides:
                return sides[name]
        return default

    return marker


def structured_square(n: int, markers: Markers = DIRICHLET, *, diagonal: str = "right",
                      perturb: float = 0.0, seed: int = 0) -> tuple[Mesh, BoundaryPartition]:
    """Unit square split into n x n cells, each cut into two triangles.

    ``diagonal`` is ``"right"``, ``"left"``, ``"alternate"`` or ``"random"``.
    ``perturb`` moves interior nodes by up to ``perturb * h`` per coordinate.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    if perturb:
        if not 0 <= perturb <= 0.25:
            raise ValueError("perturb must lie in [0, 0.25]")
        inner = (X.ravel() > 0) & (X.ravel() < 1) & (Y.ravel() > 0) & (Y.ravel() < 1)
        verts[inner] += rng.uniform(-perturb, perturb, size=(inner.sum(), 2)) / n
    idx = lambda i, j: i * (n + 1) + j
    elems = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if diagonal == "right":
                cut = True
            elif diagonal == "left":
                cut = False
            elif diagonal == "alternate":
                cut = (i + j) % 2 == 0
            elif diagonal == "random":
                cut = bool(rng.integers(2))
            else:
                raise ValueError(f"unknown diagonal mode {diagonal!r}")
            if cut:
                elems += [(a, b, c), (a, c, d)]
            else:
                elems += [(a, b, d), (b, c, d)]
    return build_mesh(verts, np.array(elems), markers)


# -- plain-text mesh format ---------------------------------------------------------

def write_mesh(prefix, mesh: Mesh, partition: BoundaryPartition) -> None:
    """Write ``prefix.node``, ``prefix.ele`` and ``prefix.bnd``."""
    prefix = Path(prefix)
    with open(prefix.with_suffix(".node"), "w") as fh:
        fh.write(f"{mesh.n_vertices}\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")
    with open(prefix.with_suffix(".ele"), "w") as fh:
        fh.write(f"{mesh.n_elements}\n")
        for i, (a, b, c) in enumerate(mesh.elements):
            fh.write(f"{i} {a} {b} {c}\n")
    with open(prefix.with_suffix(".bnd"), "w") as fh:
        for f in mesh.boundary_faces:
            a, b = mesh.faces[f]
            fh.write(f"{a} {b} {partition.marker(f)}\n")


def read_mesh(prefix) -> tuple[Mesh, BoundaryPartition]:
    prefix = Path(prefix)

    def table(path, ncols):
        lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
        count = int(lines[0][0])
        rows = lines[1:1 + count]
        if len(rows) != count or any(len(r) != ncols for r in rows):
            raise MeshError(f"malformed file {path}")
        rows.sort(key=lambda r: int(r[0]))
        if [int(r[0]) for r in rows] != list(range(count)):
            raise MeshError(f"ids in {path} must be 0..{count - 1}")
        return rows

    verts = np.array([[float(r[1]), float(r[2])] for r in table(prefix.with_suffix(".node"), 3)])
    elems = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in table(prefix.with_suffix(".ele"), 4)])
    markers = {}
    for ln in prefix.with_suffix(".bnd").read_text().splitlines():
        if not ln.strip() or ln.startswith("#"):
            continue
        a, b, m = ln.split()
        markers[(int(a), int(b))] = m
    return build_mesh(verts, elems, markers)
