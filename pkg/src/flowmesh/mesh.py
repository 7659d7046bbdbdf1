"""Core triangle-mesh representation, adjacency, edge weights and 2D projection.

Vertices live in scene units; an optional per-vertex pixel provenance
(row, col) ties depth-derived meshes back to their source image grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError, StructuralError

_FACE_AREA_EPS = 1e-14


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: (N,3) float64 vertices and (M,3) int faces.

    ``pixels`` is an optional (N,2) int array of (row, col) source pixels and
    ``image_size`` the (width, height) of the originating image; both are set
    by the depth-map mesher and preserved by the codecs.
    """

    vertices: np.ndarray
    faces: np.ndarray
    pixels: np.ndarray | None = None
    image_size: tuple[int, int] | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64)).reshape(-1, 3)
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64)).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.pixels is not None:
            p = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.int64)).reshape(-1, 2)
            if len(p) != len(v):
                raise StructuralError(
                    f"pixel provenance has {len(p)} entries for {len(v)} vertices"
                )
            object.__setattr__(self, "pixels", p)
        if not np.isfinite(v).all():
            raise StructuralError("vertex coordinates must be finite")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise StructuralError(
                    f"face index out of range: max {f.max()} for {len(v)} vertices"
                )
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise StructuralError(
                    f"degenerate face (repeated vertex index) at face {int(np.flatnonzero(degenerate)[0])}"
                )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E,2) array with i < j, sorted."""
        if not len(self.faces):
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [0, 2]]]
        )
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology and provenance, new vertex positions."""
        return Mesh(vertices, self.faces, self.pixels, self.image_size)


@dataclass(frozen=True)
class AdjacencyIndex:
    """Per-vertex sorted neighbor arrays; symmetric by construction."""

    neighbors: tuple

    def __getitem__(self, i: int) -> np.ndarray:
        return self.neighbors[i]

    def __len__(self) -> int:
        return len(self.neighbors)


@dataclass(frozen=True)
class EdgeWeights:
    """Symmetric per-edge weights, keyed by the unordered vertex pair.

    Stored as parallel arrays: ``pairs`` is (E,2) with i < j, ``values`` (E,).
    """

    pairs: np.ndarray
    values: np.ndarray
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        pairs = np.ascontiguousarray(np.asarray(self.pairs, dtype=np.int64)).reshape(-1, 2)
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64)).reshape(-1)
        if len(pairs) != len(values):
            raise StructuralError("edge pair / weight count mismatch")
        if not np.all(pairs[:, 0] < pairs[:, 1]):
            pairs = np.sort(pairs, axis=1)
        if not np.isfinite(values).all():
            raise StructuralError("edge weights must be finite")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "_index", {(int(i), int(j)): k for k, (i, j) in enumerate(pairs)}
        )

    def weight(self, i: int, j: int) -> float:
        a, b = (i, j) if i < j else (j, i)
        return float(self.values[self._index[(a, b)]])

    def __len__(self) -> int:
        return len(self.values)

    def directed(self):
        """Both orientations of every edge: (2E,) i, j and w arrays."""
        i = np.concatenate([self.pairs[:, 0], self.pairs[:, 1]])
        j = np.concatenate([self.pairs[:, 1], self.pairs[:, 0]])
        w = np.concatenate([self.values, self.values])
        return i, j, w


@dataclass(frozen=True)
class Projection2D:
    """Per-vertex 2D pixel coordinates (x right, y down) plus image size."""

    points: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64)).reshape(-1, 2)
        if not np.isfinite(pts).all():
            raise StructuralError("projected coordinates must be finite")
        object.__setattr__(self, "points", pts)


def build_adjacency(mesh: Mesh) -> AdjacencyIndex:
    """Edge-connected neighbor sets N(i), sorted per vertex."""
    sets = [set() for _ in range(mesh.n_vertices)]
    for i, j in mesh.edges():
        sets[i].add(int(j))
        sets[j].add(int(i))
    return AdjacencyIndex(tuple(np.array(sorted(s), dtype=np.int64) for s in sets))


def _face_cotangents(mesh: Mesh):
    """Per-face cotangent of each corner angle; raises on zero-area faces."""
    v = mesh.vertices
    f = mesh.faces
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    double_area = np.linalg.norm(cross, axis=1)
    bad = double_area <= _FACE_AREA_EPS
    if bad.any():
        raise DegenerateGeometryError(
            f"zero-area face at index {int(np.flatnonzero(bad)[0])}"
        )
    cots = np.empty((len(f), 3))
    corners = (p0, p1, p2)
    for c in range(3):
        a = corners[(c + 1) % 3] - corners[c]
        b = corners[(c + 2) % 3] - corners[c]
        cots[:, c] = np.einsum("ij,ij->i", a, b) / double_area
    return cots


def cotangent_weights(mesh: Mesh, clamp_negative: bool = True) -> EdgeWeights:
    """Half-sum of the cotangents opposite each edge.

    Interior edges average two opposite angles, boundary edges use the single
    available one. Negative weights are floored at zero by default so the
    assembled global system stays positive semi-definite.
    """
    cots = _face_cotangents(mesh)
    f = mesh.faces
    # corner c is opposite the edge formed by the other two corners
    raw = np.concatenate([f[:, [1, 2]], f[:, [2, 0]], f[:, [0, 1]]])
    raw.sort(axis=1)
    half = 0.5 * cots.T.reshape(-1)
    pairs, inverse = np.unique(raw, axis=0, return_inverse=True)
    values = np.zeros(len(pairs))
    np.add.at(values, inverse.reshape(-1), half)
    if clamp_negative:
        values = np.maximum(values, 0.0)
    return EdgeWeights(pairs, values)


def uniform_weights(mesh: Mesh) -> EdgeWeights:
    """w_ij = 1 on every mesh edge; fallback for sliver-ridden geometry."""
    pairs = mesh.edges()
    return EdgeWeights(pairs, np.ones(len(pairs)))


def edge_weights(mesh: Mesh, mode: str = "cotangent", clamp_negative: bool = True) -> EdgeWeights:
    if mode == "cotangent":
        return cotangent_weights(mesh, clamp_negative=clamp_negative)
    if mode == "uniform":
        return uniform_weights(mesh)
    raise ConfigurationError(f"unknown weight mode {mode!r}")


def project_2d(mesh: Mesh, image_size: tuple[int, int] | None = None) -> Projection2D:
    """Project vertices onto the image plane.

    Depth-derived meshes (pixel provenance present) map straight back onto
    their source pixel grid. Imported meshes project orthographically along
    the canonical view (z) axis, with the xy bounding box normalized to the
    image rectangle, so translation along the view axis never changes the
    projection.
    """
    if mesh.pixels is not None:
        pts = np.stack([mesh.pixels[:, 1], mesh.pixels[:, 0]], axis=1).astype(np.float64)
        w, h = mesh.image_size if mesh.image_size is not None else (
            int(mesh.pixels[:, 1].max()) + 1,
            int(mesh.pixels[:, 0].max()) + 1,
        )
        return Projection2D(pts, w, h)
    size = image_size or mesh.image_size
    if size is None:
        raise ConfigurationError(
            "mesh has no pixel provenance; supply image_size for orthographic projection"
        )
    w, h = int(size[0]), int(size[1])
    xy = mesh.vertices[:, :2]
    lo = xy.min(axis=0)
    span = xy.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    pts = (xy - lo) / span * np.array([w - 1, h - 1], dtype=np.float64)
    return Projection2D(pts, w, h)


def project_deformed(mesh: Mesh, deformed: np.ndarray,
                     image_size: tuple[int, int] | None = None) -> Projection2D:
    """Project deformed positions in the frame established by the rest mesh.

    Depth meshes drop the z axis directly (x, y are already pixel units);
    imported meshes reuse the rest mesh's bounding-box normalization so that
    rest and deformed projections share one image frame.
    """
    deformed = np.asarray(deformed, dtype=np.float64).reshape(-1, 3)
    if len(deformed) != mesh.n_vertices:
        raise StructuralError("deformed vertex count does not match the mesh")
    if mesh.pixels is not None:
        w, h = mesh.image_size if mesh.image_size is not None else (
            int(mesh.pixels[:, 1].max()) + 1,
            int(mesh.pixels[:, 0].max()) + 1,
        )
        return Projection2D(deformed[:, :2].copy(), w, h)
    size = image_size or mesh.image_size
    if size is None:
        raise ConfigurationError(
            "mesh has no pixel provenance; supply image_size for orthographic projection"
        )
    w, h = int(size[0]), int(size[1])
    xy = mesh.vertices[:, :2]
    lo = xy.min(axis=0)
    span = xy.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    pts = (deformed[:, :2] - lo) / span * np.array([w - 1, h - 1], dtype=np.float64)
    return Projection2D(pts, w, h)


# ---------------------------------------------------------------------------
# Synthetic test meshes
# ---------------------------------------------------------------------------

def synth_grid(nx: int, ny: int, spacing: float = 1.0) -> Mesh:
    """Planar grid of nx*ny vertices, 2*(nx-1)*(ny-1) faces, z = 0."""
    if nx <= 0 or ny <= 0:
        raise ConfigurationError("grid dimensions must be positive")
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    verts = np.stack([xs.ravel() * spacing, ys.ravel() * spacing,
                      np.zeros(nx * ny)], axis=1)
    faces = []
    for r in range(ny - 1):
        for c in range(nx - 1):
            a = r * nx + c
            b = a + 1
            cc = a + nx
            d = cc + 1
            faces.append((a, b, d))
            faces.append((a, d, cc))
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def synth_bar(nx: int, ny: int, nz: int, spacing: float = 1.0) -> Mesh:
    """Surface triangulation of an nx*ny*nz-cell box lattice.

    Vertices are the boundary lattice points of an (nx+1)x(ny+1)x(nz+1)
    grid in a fixed (i, j, k) lexicographic order, so the generator is fully
    deterministic.
    """
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise ConfigurationError("bar dimensions must be positive")
    index: dict[tuple[int, int, int], int] = {}
    verts = []
    for i in range(nx + 1):
        for j in range(ny + 1):
            for k in range(nz + 1):
                if i in (0, nx) or j in (0, ny) or k in (0, nz):
                    index[(i, j, k)] = len(verts)
                    verts.append((i * spacing, j * spacing, k * spacing))
    faces = []

    def quad(a, b, c, d):
        faces.append((index[a], index[b], index[c]))
        faces.append((index[a], index[c], index[d]))

    for j in range(ny):
        for k in range(nz):
            quad((0, j, k), (0, j, k + 1), (0, j + 1, k + 1), (0, j + 1, k))
            quad((nx, j, k), (nx, j + 1, k), (nx, j + 1, k + 1), (nx, j, k + 1))
    for i in range(nx):
        for k in range(nz):
            quad((i, 0, k), (i + 1, 0, k), (i + 1, 0, k + 1), (i, 0, k + 1))
            quad((i, ny, k), (i, ny, k + 1), (i + 1, ny, k + 1), (i + 1, ny, k))
    for i in range(nx):
        for j in range(ny):
            quad((i, j, 0), (i, j + 1, 0), (i + 1, j + 1, 0), (i + 1, j, 0))
            quad((i, j, nz), (i + 1, j, nz), (i + 1, j + 1, nz), (i, j + 1, nz))
    return Mesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def synth_single_triangle(side: float = 1.0) -> Mesh:
    """Equilateral triangle with its centroid at the origin, z = 0."""
    if side <= 0:
        raise ConfigurationError("triangle side must be positive")
    r = side / np.sqrt(3.0)  # circumradius
    angles = np.array([np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3])
    verts = np.stack([r * np.cos(angles), r * np.sin(angles), np.zeros(3)], axis=1)
    verts -= verts.mean(axis=0)  # exact centroid at origin
    return Mesh(verts, np.array([[0, 1, 2]], dtype=np.int64))


def synth_mesh(kind: str, **params) -> Mesh:
    """Deterministic synthetic meshes: ``grid``, ``bar`` or ``single_triangle``."""
    if kind == "grid":
        return synth_grid(**params)
    if kind == "bar":
        return synth_bar(**params)
    if kind == "single_triangle":
        return synth_single_triangle(**params)
    raise ConfigurationError(f"unknown synthetic mesh kind {kind!r}")
