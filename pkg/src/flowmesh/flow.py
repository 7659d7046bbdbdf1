"""2D deformation vector flow fields and supervision-subset sampling.

The flow anchors at the rest projection of each vertex and stores its pixel
displacement toward the deformed projection. Candidates are probed on an
N x N grid over the edit mask and thinned either by displacement magnitude
or at regular intervals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, StructuralError
from .mesh import Projection2D

DEFAULT_GRID_N = 20
DEFAULT_SAMPLE_COUNT = 10
DEFAULT_CAPTURE_RADIUS = 3.0


@dataclass(frozen=True)
class FlowField:
    """Per-vertex records (x, y, dx, dy) in pixels plus the source image size."""

    positions: np.ndarray
    deltas: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64)).reshape(-1, 2)
        del_ = np.ascontiguousarray(np.asarray(self.deltas, dtype=np.float64)).reshape(-1, 2)
        if len(pos) != len(del_):
            raise StructuralError("positions and deltas must pair up")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "deltas", del_)

    def __len__(self) -> int:
        return len(self.positions)

    def records(self) -> np.ndarray:
        """(N, 4) array with columns x, y, dx, dy."""
        return np.hstack([self.positions, self.deltas])


@dataclass(frozen=True)
class SampledFlow:
    """Ordered supervision subset; every anchor lies inside the edit mask."""

    vectors: np.ndarray     # (k, 4) columns x, y, dx, dy
    strategy: str
    requested: int
    grid_n: int

    def __post_init__(self):
        vec = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64)).reshape(-1, 4)
        if len(vec) == 0:
            raise ConfigurationError("sampled flow cannot be empty")
        if len(vec) > self.requested:
            raise ConfigurationError("sampled flow exceeds the requested count")
        object.__setattr__(self, "vectors", vec)

    def __len__(self) -> int:
        return len(self.vectors)

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.vectors[:, 2], self.vectors[:, 3])


def compute_flow(proj_before: Projection2D, proj_after: Projection2D) -> FlowField:
    """Per-vertex displacement between two projections of the same mesh."""
    if len(proj_before.points) != len(proj_after.points):
        raise StructuralError("projections have different vertex counts")
    return FlowField(
        positions=proj_before.points.copy(),
        deltas=proj_after.points - proj_before.points,
        width=proj_before.width,
        height=proj_before.height,
    )


def grid_candidates(flow: FlowField, mask: np.ndarray, grid_n: int = DEFAULT_GRID_N,
                    capture_radius: float = DEFAULT_CAPTURE_RADIUS) -> np.ndarray:
    """Probe an N x N grid over the mask's bounding box.

    Each in-mask probe adopts the flow of the nearest projected vertex within
    the capture radius; probes outside the mask or without a nearby vertex are
    dropped. Returns (m, 4) rows ordered row-major by probe pixel.
    """
    if grid_n < 1:
        raise ConfigurationError("grid size must be >= 1")
    mask = np.asarray(mask).astype(bool)
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ConfigurationError("edit mask is empty")
    probe_x = np.unique(np.round(np.linspace(xs.min(), xs.max(), grid_n)).astype(int))
    probe_y = np.unique(np.round(np.linspace(ys.min(), ys.max(), grid_n)).astype(int))
    rows = []
    r2 = capture_radius ** 2
    for py in probe_y:
        for px in probe_x:
            if not mask[py, px]:
                continue
            d2 = (flow.positions[:, 0] - px) ** 2 + (flow.positions[:, 1] - py) ** 2
            idx = int(np.argmin(d2))
            if d2[idx] > r2:
                continue
            rows.append((float(px), float(py), flow.deltas[idx, 0], flow.deltas[idx, 1]))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def sample_magnitude(candidates: np.ndarray, count: int = DEFAULT_SAMPLE_COUNT,
                     grid_n: int = DEFAULT_GRID_N) -> SampledFlow:
    """Top-k candidates by displacement magnitude, descending.

    Ties break by row-major anchor order.
    """
    candidates = _checked(candidates, count)
    mag = np.hypot(candidates[:, 2], candidates[:, 3])
    order = np.lexsort((candidates[:, 0], candidates[:, 1], -mag))
    take = order[: min(count, len(candidates))]
    return SampledFlow(candidates[take], "magnitude", count, grid_n)


def sample_uniform(candidates: np.ndarray, count: int = DEFAULT_SAMPLE_COUNT,
                   grid_n: int = DEFAULT_GRID_N) -> SampledFlow:
    """Every ceil(n/k)-th candidate in row-major anchor order, first included."""
    candidates = _checked(candidates, count)
    stride = -(-len(candidates) // count)
    return SampledFlow(candidates[::stride], "uniform", count, grid_n)


def _checked(candidates: np.ndarray, count: int) -> np.ndarray:
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 4)
    if count < 1:
        raise ConfigurationError("sample count must be >= 1")
    if len(candidates) == 0:
        raise ConfigurationError("no candidates to sample from")
    return candidates


def sample_flow(candidates: np.ndarray, strategy: str,
                count: int = DEFAULT_SAMPLE_COUNT,
                grid_n: int = DEFAULT_GRID_N) -> SampledFlow:
    if strategy == "magnitude":
        return sample_magnitude(candidates, count, grid_n)
    if strategy == "uniform":
        return sample_uniform(candidates, count, grid_n)
    raise ConfigurationError(f"unknown sampling strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_flow_json(sampled: SampledFlow, path) -> None:
    payload = {
        "grid_n": sampled.grid_n,
        "strategy": sampled.strategy,
        "vectors": [
            {"x": float(x), "y": float(y), "dx": float(dx), "dy": float(dy)}
            for x, y, dx, dy in sampled.vectors
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def read_flow_json(path) -> SampledFlow:
    data = json.loads(Path(path).read_text())
    vectors = np.array([[v["x"], v["y"], v["dx"], v["dy"]] for v in data["vectors"]])
    return SampledFlow(vectors, data["strategy"], requested=max(len(vectors), 1),
                       grid_n=data["grid_n"])


def write_flow_csv(rows: np.ndarray, path) -> None:
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    lines = ["x,y,dx,dy"]
    for x, y, dx, dy in rows:
        lines.append(f"{float(x)!r},{float(y)!r},{float(dx)!r},{float(dy)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_flow_csv(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "x,y,dx,dy":
        raise ConfigurationError(f"missing flow CSV header in {path}")
    return np.array([[float(t) for t in line.split(",")] for line in lines[1:]],
                    dtype=np.float64).reshape(-1, 4)
