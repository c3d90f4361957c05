"""Simplex meshes: structured generation, text I/O and P1 element geometry.

Meshes are plain triangles (2D) or tetrahedra (3D) with positively oriented
connectivity.  Boundary faces carry string tags; what a tag means physically
(Dirichlet value, natural boundary) is decided by the caller via
:class:`BoundaryTag`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

# Local faces of a simplex. 2D: edges in node order; 3D: outward-oriented
# triangles of a positively oriented tetrahedron.
FACES_2D = ((0, 1), (1, 2), (2, 0))
FACES_3D = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))

EDGES_2D = FACES_2D
EDGES_3D = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


class MeshError(Exception):
    """Raised for malformed mesh input (file or arrays)."""


def local_faces(dim: int):
    return FACES_2D if dim == 2 else FACES_3D


def local_edges(dim: int):
    return EDGES_2D if dim == 2 else EDGES_3D


@dataclass(frozen=True)
class BoundaryTag:
    """Physical meaning of one boundary tag.

    kind is "dirichlet" (prescribed potential) or "neumann" (zero normal
    displacement; no assembly contribution).  A Dirichlet value may be a
    constant or a callable of the node coordinates, the latter is only
    reachable through the API (case files use constants).
    """

    name: str
    kind: str
    value: float | Callable[[np.ndarray], float] = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary kind {self.kind!r} for tag {self.name!r}")
        if self.kind == "dirichlet" and not callable(self.value):
            if not math.isfinite(float(self.value)):
                raise ValueError(f"non-finite Dirichlet value for tag {self.name!r}")

    def value_at(self, x: np.ndarray) -> float:
        return float(self.value(x)) if callable(self.value) else float(self.value)


@dataclass
class Mesh:
    """Immutable simplex mesh.

    nodes: (n_nodes, dim) coordinates.
    elements: (n_elements, dim+1) node indices, positively oriented.
    boundary_faces: list of (element, local_face, tag name).
    face_adjacency: sorted node tuple -> ((elem, lf), (elem, lf) | None).
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_faces: list[tuple[int, int, str]]
    face_adjacency: dict = field(repr=False, default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @staticmethod
    def build(dim, nodes, elements, boundary_faces) -> "Mesh":
        """Validate arrays, build adjacency and freeze the result."""
        nodes = np.ascontiguousarray(nodes, dtype=float)
        elements = np.ascontiguousarray(elements, dtype=np.int64)
        if dim not in (2, 3):
            raise MeshError(f"dim must be 2 or 3, got {dim}")
        if nodes.ndim != 2 or nodes.shape[1] != dim:
            raise MeshError(f"nodes must have shape (*, {dim})")
        if elements.ndim != 2 or elements.shape[1] != dim + 1:
            raise MeshError(f"elements must have shape (*, {dim + 1})")
        mesh = Mesh(dim, nodes, elements, list(boundary_faces))
        mesh._validate()
        mesh.face_adjacency = _build_adjacency(mesh)
        mesh._check_boundary_tags()
        nodes.setflags(write=False)
        elements.setflags(write=False)
        return mesh

    def _validate(self):
        n = self.n_nodes
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            for e, conn in enumerate(self.elements):
                out = conn[(conn < 0) | (conn >= n)]
                if out.size:
                    raise MeshError(f"element {e} references node {int(out[0])} but mesh has {n} nodes")
        for e, conn in enumerate(self.elements):
            if len(set(int(c) for c in conn)) != self.dim + 1:
                raise MeshError(f"element {e} has repeated node indices")
        vols = signed_measures(self)
        bad = np.nonzero(vols <= 0.0)[0]
        if bad.size:
            raise MeshError(
                f"element {int(bad[0])} is not positively oriented "
                f"(signed measure {vols[int(bad[0])]:.3e}); fix the input ordering"
            )

    def _check_boundary_tags(self):
        tagged = set()
        for e, lf, tag in self.boundary_faces:
            if not (0 <= e < self.n_elements):
                raise MeshError(f"boundary face references element {e} out of range")
            faces = local_faces(self.dim)
            if not (0 <= lf < len(faces)):
                raise MeshError(f"boundary face of element {e} has local face {lf} out of range")
            key = tuple(sorted(int(i) for i in self.elements[e][list(faces[lf])]))
            if self.face_adjacency[key][1] is not None:
                raise MeshError(f"face {key} of element {e} is tagged {tag!r} but is interior")
            tagged.add(key)
        for key, (first, second) in self.face_adjacency.items():
            if second is None and key not in tagged:
                e, lf = first
                raise MeshError(f"boundary face {key} (element {e}, local face {lf}) has no tag")

    def face_nodes(self, e: int, lf: int) -> np.ndarray:
        return self.elements[e][list(local_faces(self.dim)[lf])]

    def element_coords(self, e: int) -> np.ndarray:
        return self.nodes[self.elements[e]]


def _build_adjacency(mesh: Mesh) -> dict:
    adj: dict = {}
    faces = local_faces(mesh.dim)
    for e in range(mesh.n_elements):
        conn = mesh.elements[e]
        for lf, face in enumerate(faces):
            key = tuple(sorted(int(conn[i]) for i in face))
            slot = adj.get(key)
            if slot is None:
                adj[key] = ((e, lf), None)
            elif slot[1] is None:
                adj[key] = (slot[0], (e, lf))
            else:
                raise MeshError(f"face {key} is shared by more than two elements")
    return adj


# ---------------------------------------------------------------------------
# geometry


def signed_measures(mesh: Mesh) -> np.ndarray:
    """Signed element measures (area/volume), vectorized."""
    X = mesh.nodes[mesh.elements]               # (M, d+1, d)
    B = X[:, 1:, :] - X[:, :1, :]               # (M, d, d) edge matrix
    det = np.linalg.det(B)
    return det / math.factorial(mesh.dim)


def element_geometry(mesh: Mesh, e: int):
    """Coordinates, measure and constant P1 shape gradients of one element.

    Returns (coords (d+1, d), measure, grads (d+1, d)).
    """
    coords = mesh.element_coords(e)
    return coords, *p1_geometry(coords)


def p1_geometry(coords: np.ndarray):
    """Measure and P1 gradients from simplex vertex coordinates."""
    d = coords.shape[1]
    B = coords[1:] - coords[0]
    det = np.linalg.det(B)
    measure = abs(det) / math.factorial(d)
    if measure == 0.0:
        raise MeshError("degenerate simplex (zero measure)")
    grads = np.empty((d + 1, d))
    grads[1:] = np.linalg.inv(B).T          # B rows are edge vectors
    grads[0] = -grads[1:].sum(axis=0)
    return measure, grads


def all_geometry(mesh: Mesh):
    """Vectorized (measures (M,), grads (M, d+1, d)) for every element."""
    d = mesh.dim
    X = mesh.nodes[mesh.elements]
    B = X[:, 1:, :] - X[:, :1, :]
    det = np.linalg.det(B)
    measures = np.abs(det) / math.factorial(d)
    inv = np.linalg.inv(B).transpose(0, 2, 1)   # columns of inv(B) = gradients 1..d
    grads = np.empty((mesh.n_elements, d + 1, d))
    grads[:, 1:, :] = inv
    grads[:, 0, :] = -inv.sum(axis=1)
    return measures, grads


def char_lengths(mesh: Mesh) -> np.ndarray:
    """Per-element characteristic length: the longest edge."""
    X = mesh.nodes[mesh.elements]
    edges = local_edges(mesh.dim)
    h = np.zeros(mesh.n_elements)
    for a, b in edges:
        h = np.maximum(h, np.linalg.norm(X[:, a, :] - X[:, b, :], axis=1))
    return h


def face_measure_normal(face_coords: np.ndarray, elem_centroid: np.ndarray):
    """Measure and outward unit normal of an element face.

    face_coords: (d, d) vertex coordinates of the face (edge in 2D, triangle
    in 3D).  The normal is oriented away from elem_centroid.
    """
    if face_coords.shape[1] == 2:
        t = face_coords[1] - face_coords[0]
        measure = float(np.linalg.norm(t))
        n = np.array([t[1], -t[0]]) / measure
    else:
        u = face_coords[1] - face_coords[0]
        v = face_coords[2] - face_coords[0]
        c = np.cross(u, v)
        twice = float(np.linalg.norm(c))
        measure = 0.5 * twice
        n = c / twice
    if np.dot(n, face_coords.mean(axis=0) - elem_centroid) < 0.0:
        n = -n
    return measure, n


# ---------------------------------------------------------------------------
# structured generation

_TET_PERMS = (
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
)


def generate_structured(dim: int, nx: int, ny: int | None = None, nz: int | None = None,
                        box: tuple | None = None) -> Mesh:
    """Uniform simplex mesh of an axis-aligned box.

    2D: each grid square is split into two triangles along the same diagonal
    (corner (i, j) to (i+1, j+1)).  3D: each cube is split into six
    tetrahedra sharing the main diagonal.  Boundary faces are tagged
    left/right (x), bottom/top (y) and front/back (z).
    """
    if dim == 2:
        return _structured_2d(nx, ny if ny is not None else nx, box)
    if dim == 3:
        return _structured_3d(nx, ny if ny is not None else nx, nz if nz is not None else nx, box)
    raise MeshError(f"dim must be 2 or 3, got {dim}")


def _grid_nodes(counts, box):
    axes = [np.linspace(box[2 * i], box[2 * i + 1], counts[i] + 1) for i in range(len(counts))]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _structured_2d(nx, ny, box):
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    box = box or (0.0, 1.0, 0.0, 1.0)
    nodes = _grid_nodes((nx, ny), box)

    def nid(i, j):
        return i * (ny + 1) + j

    elements = []
    for i in range(nx):
        for j in range(ny):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            elements.append((a, b, c))
            elements.append((a, c, d))
    return _finish_structured(2, nodes, np.array(elements), box)


def _structured_3d(nx, ny, nz, box):
    if nx < 1 or ny < 1 or nz < 1:
        raise MeshError("nx, ny and nz must be at least 1")
    box = box or (0.0, 1.0, 0.0, 1.0, 0.0, 1.0)
    nodes = _grid_nodes((nx, ny, nz), box)

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    basis = np.eye(3, dtype=int)
    elements = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = np.array([i, j, k])
                for perm in _TET_PERMS:
                    verts = [corner.copy()]
                    for axis in perm:
                        verts.append(verts[-1] + basis[axis])
                    conn = [nid(*v) for v in verts]
                    # odd permutations produce negative volume; swap to fix
                    if _perm_parity(perm) < 0:
                        conn[2], conn[3] = conn[3], conn[2]
                    elements.append(tuple(conn))
    return _finish_structured(3, nodes, np.array(elements), box)


def _perm_parity(perm) -> int:
    inversions = sum(1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b])
    return -1 if inversions % 2 else 1


_SIDE_NAMES = {0: ("left", "right"), 1: ("bottom", "top"), 2: ("front", "back")}


def _finish_structured(dim, nodes, elements, box) -> Mesh:
    mesh = Mesh(dim, np.asarray(nodes, dtype=float), np.asarray(elements, dtype=np.int64), [])
    mesh._validate()
    mesh.face_adjacency = _build_adjacency(mesh)
    extent = max(box[2 * i + 1] - box[2 * i] for i in range(dim))
    tol = 1e-12 * max(extent, 1.0)
    boundary = []
    for key, (first, second) in mesh.face_adjacency.items():
        if second is not None:
            continue
        e, lf = first
        coords = mesh.nodes[list(key)]
        tag = None
        for axis in range(dim):
            lo, hi = box[2 * axis], box[2 * axis + 1]
            if np.all(np.abs(coords[:, axis] - lo) < tol):
                tag = _SIDE_NAMES[axis][0]
            elif np.all(np.abs(coords[:, axis] - hi) < tol):
                tag = _SIDE_NAMES[axis][1]
            if tag:
                break
        if tag is None:
            raise MeshError(f"boundary face {key} does not lie on a box side")
        boundary.append((e, lf, tag))
    boundary.sort()
    mesh.boundary_faces = boundary
    mesh._check_boundary_tags()
    mesh.nodes.setflags(write=False)
    mesh.elements.setflags(write=False)
    return mesh


# ---------------------------------------------------------------------------
# text I/O
#
# Format (whitespace separated, '#' starts a comment):
#   dim n_nodes n_elements n_boundary_faces
#   <n_nodes lines of coordinates>
#   <n_elements lines of 0-based node indices>
#   <n_boundary_faces lines of: element local_face tag_name>


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as f:
        f.write(f"{mesh.dim} {mesh.n_nodes} {mesh.n_elements} {len(mesh.boundary_faces)}\n")
        for x in mesh.nodes:
            f.write(" ".join(f"{v:.17g}" for v in x) + "\n")
        for conn in mesh.elements:
            f.write(" ".join(str(int(c)) for c in conn) + "\n")
        for e, lf, tag in mesh.boundary_faces:
            f.write(f"{e} {lf} {tag}\n")


def read_mesh(path) -> Mesh:
    """Read a mesh text file, reporting the line number of any parse error."""
    rows = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                rows.append((lineno, text.split()))

    def take(what):
        if not rows:
            raise MeshError(f"unexpected end of file: expected {what}")
        return rows.pop(0)

    lineno, head = take("header 'dim n_nodes n_elements n_boundary_faces'")
    try:
        dim, n_nodes, n_elems, n_bfaces = (int(t) for t in head)
    except (ValueError, TypeError):
        raise MeshError(f"line {lineno}: malformed header {' '.join(head)!r}")
    if dim not in (2, 3):
        raise MeshError(f"line {lineno}: dim must be 2 or 3, got {dim}")

    nodes = np.empty((n_nodes, dim))
    for i in range(n_nodes):
        lineno, toks = take(f"node {i}")
        if len(toks) != dim:
            raise MeshError(f"line {lineno}: node {i} needs {dim} coordinates, got {len(toks)}")
        try:
            nodes[i] = [float(t) for t in toks]
        except ValueError:
            raise MeshError(f"line {lineno}: bad coordinate in node {i}")

    elements = np.empty((n_elems, dim + 1), dtype=np.int64)
    for e in range(n_elems):
        lineno, toks = take(f"element {e}")
        if len(toks) != dim + 1:
            raise MeshError(f"line {lineno}: element {e} needs {dim + 1} node indices, got {len(toks)}")
        try:
            elements[e] = [int(t) for t in toks]
        except ValueError:
            raise MeshError(f"line {lineno}: bad node index in element {e}")

    boundary = []
    for b in range(n_bfaces):
        lineno, toks = take(f"boundary face {b}")
        if len(toks) != 3:
            raise MeshError(f"line {lineno}: boundary face {b} needs 'element local_face tag'")
        try:
            boundary.append((int(toks[0]), int(toks[1]), toks[2]))
        except ValueError:
            raise MeshError(f"line {lineno}: bad boundary face {b}")

    if rows:
        raise MeshError(f"line {rows[0][0]}: trailing content after mesh data")
    return Mesh.build(dim, nodes, elements, boundary)
