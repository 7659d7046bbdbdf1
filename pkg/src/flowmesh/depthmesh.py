"""Depth-map meshing and lifting of 2D drag instructions onto mesh vertices.

Depth values use a disparity-like convention: larger means nearer, so the
background threshold removes far content. The z axis is scaled by
``depth_scale`` (default max(width, height)/4) to keep deformations
well-conditioned against the pixel-unit x/y axes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EmptyMeshError, UnmappedHandleError
from .images import load_mask_ref, mask_to_rle
from .mesh import Mesh, Projection2D

DEFAULT_TAU_D = 0.1
AUTO_TAU_B_OFFSET = 0.3
DEFAULT_SNAP_RADIUS = 5.0


@dataclass(frozen=True)
class DepthMap:
    """Normalized depth raster: float64 values in [0, 1], row-major."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.ndim != 2:
            raise ConfigurationError("depth map must be a 2D array")
        if not np.isfinite(vals).all() or vals.min() < 0 or vals.max() > 1:
            raise ConfigurationError("depth values must be finite and within [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DragSpec2D:
    """Handle/target pixel pairs plus the editable-region mask."""

    handles: np.ndarray   # (n, 2) pixel (x, y)
    targets: np.ndarray   # (n, 2) pixel (x, y)
    mask: np.ndarray      # (H, W) bool, nonzero = editable

    def __post_init__(self):
        handles = np.ascontiguousarray(np.asarray(self.handles, dtype=np.float64)).reshape(-1, 2)
        targets = np.ascontiguousarray(np.asarray(self.targets, dtype=np.float64)).reshape(-1, 2)
        mask = np.ascontiguousarray(np.asarray(self.mask).astype(bool))
        if len(handles) == 0:
            raise ConfigurationError("drag spec needs at least one handle/target pair")
        if len(handles) != len(targets):
            raise ConfigurationError("handle and target counts differ")
        if not mask.any():
            raise ConfigurationError("editable mask is empty")
        h, w = mask.shape
        for name, pts in (("handle", handles), ("target", targets)):
            if (pts[:, 0] < 0).any() or (pts[:, 0] > w - 1).any() \
                    or (pts[:, 1] < 0).any() or (pts[:, 1] > h - 1).any():
                raise ConfigurationError(f"{name} pixel outside image bounds {w}x{h}")
        object.__setattr__(self, "handles", handles)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class ConstraintSet:
    """Partition of vertices into movable / fixed / handle, with targets.

    movable, fixed and handles are disjoint index arrays that together cover
    every vertex; each handle carries exactly one target position.
    """

    movable: np.ndarray
    fixed: np.ndarray
    pinned_positions: np.ndarray
    handles: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        movable = np.ascontiguousarray(np.asarray(self.movable, dtype=np.int64)).reshape(-1)
        fixed = np.ascontiguousarray(np.asarray(self.fixed, dtype=np.int64)).reshape(-1)
        handles = np.ascontiguousarray(np.asarray(self.handles, dtype=np.int64)).reshape(-1)
        pinned = np.ascontiguousarray(np.asarray(self.pinned_positions, dtype=np.float64)).reshape(-1, 3)
        targets = np.ascontiguousarray(np.asarray(self.targets, dtype=np.float64)).reshape(-1, 3)
        if len(set(movable) & set(fixed)) or len(set(handles) & set(fixed)) \
                or len(set(handles) & set(movable)):
            raise ConfigurationError("movable, fixed and handle sets must be disjoint")
        if len(pinned) != len(fixed):
            raise ConfigurationError("one pinned position per fixed vertex required")
        if len(targets) != len(handles):
            raise ConfigurationError("one target per handle vertex required")
        object.__setattr__(self, "movable", movable)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "handles", handles)
        object.__setattr__(self, "pinned_positions", pinned)
        object.__setattr__(self, "targets", targets)

    @property
    def n_vertices(self) -> int:
        return len(self.movable) + len(self.fixed) + len(self.handles)

    def covers(self, n: int) -> bool:
        ids = np.concatenate([self.movable, self.fixed, self.handles])
        return len(ids) == n and (np.sort(ids) == np.arange(n)).all()


def default_depth_scale(width: int, height: int) -> float:
    return max(width, height) * 0.25


def resolve_tau_b(depth: DepthMap, tau_b) -> float:
    """'auto' resolves to mean depth + 0.3; numbers pass through."""
    if isinstance(tau_b, str):
        if tau_b != "auto":
            raise ConfigurationError(f"tau_b must be a number or 'auto', got {tau_b!r}")
        return float(depth.values.mean() + AUTO_TAU_B_OFFSET)
    return float(tau_b)


def depth_to_mesh(depth: DepthMap, tau_d: float = DEFAULT_TAU_D, tau_b="auto",
                  reduction_ratio: float = 1.0,
                  depth_scale: float | None = None) -> Mesh:
    """Mesh the retained pixels of a depth map.

    Pixels become vertices at (col, row, depth*depth_scale); grid cells are
    split into two triangles, a face is kept only while every pairwise depth
    difference inside it stays below tau_d and none of its vertices is deeper
    than the background threshold. reduction_ratio r subsamples the pixel
    grid with stride ceil(1/sqrt(r)) before meshing. Isolated vertices are
    dropped; (row, col) provenance is recorded per surviving vertex.
    """
    if tau_d <= 0:
        raise ConfigurationError("tau_d must be positive")
    if not (0 < reduction_ratio <= 1):
        raise ConfigurationError("reduction_ratio must be in (0, 1]")
    tau_b_val = resolve_tau_b(depth, tau_b)
    scale = default_depth_scale(depth.width, depth.height) if depth_scale is None else depth_scale

    stride = math.ceil(1.0 / math.sqrt(reduction_ratio))
    rows = np.arange(0, depth.height, stride)
    cols = np.arange(0, depth.width, stride)
    sub = depth.values[np.ix_(rows, cols)]
    n_rows, n_cols = sub.shape

    grid_index = np.arange(n_rows * n_cols).reshape(n_rows, n_cols)
    a = grid_index[:-1, :-1].ravel()
    b = grid_index[:-1, 1:].ravel()
    c = grid_index[1:, :-1].ravel()
    d = grid_index[1:, 1:].ravel()
    # each cell splits along its (r, c)-(r+1, c+1) diagonal
    tris = np.concatenate([np.stack([a, b, d], axis=1), np.stack([a, d, c], axis=1)])

    flat = sub.ravel()
    t0, t1, t2 = flat[tris[:, 0]], flat[tris[:, 1]], flat[tris[:, 2]]
    spread_ok = (
        (np.abs(t0 - t1) < tau_d)
        & (np.abs(t1 - t2) < tau_d)
        & (np.abs(t0 - t2) < tau_d)
    )
    foreground_ok = (t0 >= tau_b_val) & (t1 >= tau_b_val) & (t2 >= tau_b_val)
    tris = tris[spread_ok & foreground_ok]
    if len(tris) == 0:
        raise EmptyMeshError(
            f"no faces survived meshing (tau_d={tau_d}, tau_b={tau_b_val}, "
            f"reduction_ratio={reduction_ratio})"
        )

    keep = np.unique(tris)
    remap = np.full(n_rows * n_cols, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    rr = rows[keep // n_cols]
    cc = cols[keep % n_cols]
    verts = np.stack([cc.astype(np.float64), rr.astype(np.float64), flat[keep] * scale], axis=1)
    pixels = np.stack([rr, cc], axis=1)
    return Mesh(verts, remap[tris], pixels=pixels,
                image_size=(depth.width, depth.height))


def lift_drag_spec(spec: DragSpec2D, mesh: Mesh, proj: Projection2D,
                   snap_radius: float = DEFAULT_SNAP_RADIUS) -> ConstraintSet:
    """Map a 2D drag spec onto mesh vertices.

    Handles snap to the nearest projected vertex (ties to the lowest index);
    a target keeps the handle's depth and replaces (x, y) with the target
    pixel. Vertices projecting inside the mask become movable, everything
    else is fixed at its current position.
    """
    if mesh.n_vertices == 0:
        raise ConfigurationError("cannot lift a drag spec onto an empty mesh")
    if len(proj.points) != mesh.n_vertices:
        raise ConfigurationError("projection does not match the mesh")

    handle_ids = []
    targets3 = []
    for (hx, hy), (tx, ty) in zip(spec.handles, spec.targets):
        d2 = (proj.points[:, 0] - hx) ** 2 + (proj.points[:, 1] - hy) ** 2
        idx = int(np.argmin(d2))  # argmin takes the lowest index on ties
        if math.sqrt(d2[idx]) > snap_radius:
            raise UnmappedHandleError(
                f"handle ({hx}, {hy}) is {math.sqrt(d2[idx]):.2f} px from the "
                f"nearest vertex (snap radius {snap_radius})"
            )
        handle_ids.append(idx)
        targets3.append((tx, ty, mesh.vertices[idx, 2]))

    h, w = spec.mask.shape
    px = np.clip(np.round(proj.points[:, 0]).astype(int), 0, w - 1)
    py = np.clip(np.round(proj.points[:, 1]).astype(int), 0, h - 1)
    in_mask = spec.mask[py, px]

    handle_arr = np.array(sorted(set(handle_ids)), dtype=np.int64)
    if len(handle_arr) != len(handle_ids):
        raise ConfigurationError("two drags snapped to the same vertex")
    is_handle = np.zeros(mesh.n_vertices, dtype=bool)
    is_handle[handle_arr] = True
    movable = np.flatnonzero(in_mask & ~is_handle)
    fixed = np.flatnonzero(~in_mask & ~is_handle)
    return ConstraintSet(
        movable=movable,
        fixed=fixed,
        pinned_positions=mesh.vertices[fixed],
        handles=np.array(handle_ids, dtype=np.int64),
        targets=np.array(targets3, dtype=np.float64).reshape(-1, 3),
    )


# ---------------------------------------------------------------------------
# Drag-spec JSON: {"drags":[{"handle":[x,y],"target":[x,y]}],"mask":...}
# ---------------------------------------------------------------------------

def drag_spec_from_dict(data: dict, base_dir=None) -> DragSpec2D:
    if "drags" not in data or "mask" not in data:
        raise ConfigurationError("drag spec needs 'drags' and 'mask' entries")
    handles = [d["handle"] for d in data["drags"]]
    targets = [d["target"] for d in data["drags"]]
    mask = load_mask_ref(data["mask"], base_dir=base_dir)
    return DragSpec2D(handles, targets, mask)


def read_drag_spec(path) -> DragSpec2D:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"drag spec not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed drag spec JSON: {exc}") from exc
    return drag_spec_from_dict(data, base_dir=p.parent)


def drag_spec_to_dict(spec: DragSpec2D) -> dict:
    return {
        "drags": [
            {"handle": [float(h[0]), float(h[1])], "target": [float(t[0]), float(t[1])]}
            for h, t in zip(spec.handles, spec.targets)
        ],
        "mask": mask_to_rle(spec.mask),
    }


def write_drag_spec(spec: DragSpec2D, path) -> None:
    Path(path).write_text(json.dumps(drag_spec_to_dict(spec), indent=1))
