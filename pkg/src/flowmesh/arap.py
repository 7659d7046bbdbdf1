"""Rigidity-preserving deformation energies and the progressive local-global solver.

The per-vertex energy applies the fitted rotation to the deformed edge and
compares against the rest edge,

    E(M) = sum_i sum_{j in N(i)} w_ij || R_i (v'_i - v'_j) - (v_i - v_j) ||^2,

optionally extended by a rotation-consistency term alpha * sum ||R_i - R_j||_F^2
and, between progressive steps, a displacement penalty beta * sum ||v'^(k+1) - v'^(k)||^2.
The solver alternates a local rotation fit (batched SVD polar factors) with a
global sparse SPD solve in which fixed and handle vertices enter as boundary
values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .depthmesh import ConstraintSet
from .errors import ConfigurationError, NumericalError, RankError, StructuralError
from .mesh import EdgeWeights, Mesh, edge_weights
from .meshobj import read_obj, write_obj

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class DeformParams:
    """Knobs of the progressive solver.

    alpha weighs rotation smoothness, beta the inter-step displacement
    penalty, lam the fraction of the remaining handle distance covered per
    step, and steps the number K of progressive steps.
    """

    alpha: float = 0.3
    beta: float = 0.8
    lam: float = 0.5
    steps: int = 10
    max_lg_iters: int = 50
    rel_tol: float = 1e-6
    weight_mode: str = "cotangent"

    def __post_init__(self):
        if not (0 < self.lam <= 1):
            raise ConfigurationError(f"lambda must be in (0, 1], got {self.lam}")
        if self.steps < 1:
            raise ConfigurationError("step count K must be >= 1")
        if self.rel_tol <= 0:
            raise ConfigurationError("rel_tol must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be non-negative")
        if self.weight_mode not in ("cotangent", "uniform"):
            raise ConfigurationError(f"unknown weight mode {self.weight_mode!r}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda": self.lam,
            "steps": self.steps,
            "max_lg_iters": self.max_lg_iters,
            "rel_tol": self.rel_tol,
            "weight_mode": self.weight_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeformParams":
        known = {
            "alpha": "alpha", "beta": "beta", "lambda": "lam", "lam": "lam",
            "steps": "steps", "K": "steps", "max_lg_iters": "max_lg_iters",
            "rel_tol": "rel_tol", "weight_mode": "weight_mode",
        }
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigurationError(f"unknown deformation parameter {key!r}")
            kwargs[known[key]] = value
        return cls(**kwargs)


@dataclass(frozen=True)
class RotationField:
    """One 3x3 rotation per vertex; orthonormal with det +1 to 1e-8."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.ascontiguousarray(np.asarray(self.matrices, dtype=np.float64))
        if mats.ndim != 3 or mats.shape[1:] != (3, 3):
            raise StructuralError("rotation field must be (N, 3, 3)")
        if len(mats):
            eye = np.eye(3)
            gram = np.einsum("nij,nkj->nik", mats, mats)
            if np.abs(gram - eye).max() > _ORTHO_TOL:
                raise StructuralError("rotation matrices must be orthonormal")
            if np.abs(np.linalg.det(mats) - 1.0).max() > _ORTHO_TOL:
                raise StructuralError("rotation matrices must have determinant +1")
        object.__setattr__(self, "matrices", mats)

    def __len__(self) -> int:
        return len(self.matrices)

    @classmethod
    def identity(cls, n: int) -> "RotationField":
        return cls(np.broadcast_to(np.eye(3), (n, 3, 3)).copy())


def arap_energy(mesh: Mesh, deformed: np.ndarray, weights: EdgeWeights,
                rotations: RotationField) -> float:
    """Rigidity energy; every edge contributes from both endpoints."""
    deformed = np.asarray(deformed, dtype=np.float64).reshape(-1, 3)
    if len(deformed) != mesh.n_vertices or len(rotations) != mesh.n_vertices:
        raise StructuralError("deformed positions / rotations must match the mesh size")
    if len(weights) == 0:
        return 0.0
    i, j, w = weights.directed()
    rest = mesh.vertices[i] - mesh.vertices[j]
    cur = deformed[i] - deformed[j]
    rotated = np.einsum("nab,nb->na", rotations.matrices[i], cur)
    return float(np.sum(w * np.sum((rotated - rest) ** 2, axis=1)))


def rotation_smoothness(weights: EdgeWeights, rotations: RotationField) -> float:
    """sum_i sum_{j in N(i)} ||R_i - R_j||_F^2 (both edge directions)."""
    if len(weights) == 0:
        return 0.0
    i, j, _ = weights.directed()
    diff = rotations.matrices[i] - rotations.matrices[j]
    return float(np.sum(diff ** 2))


def srarap_energy(mesh: Mesh, deformed: np.ndarray, weights: EdgeWeights,
                  rotations: RotationField, alpha: float) -> float:
    return arap_energy(mesh, deformed, weights, rotations) \
        + alpha * rotation_smoothness(weights, rotations)


def fit_rotations(mesh: Mesh, deformed: np.ndarray, weights: EdgeWeights,
                  alpha: float = 0.0,
                  prev_rotations: RotationField | None = None) -> RotationField:
    """Per-vertex best rotations via polar decomposition of the edge covariance.

    S_i = sum_j w_ij (v_i - v_j)(v'_i - v'_j)^T; its polar factor minimizes the
    energy's rotation term. With alpha > 0 and previous rotations available the
    covariance is augmented by 2*alpha*sum_j prevR_j, the block-coordinate
    minimizer of the rotation-consistency term given the neighbors' rotations.
    """
    deformed = np.asarray(deformed, dtype=np.float64).reshape(-1, 3)
    n = mesh.n_vertices
    if len(deformed) != n:
        raise StructuralError("deformed positions must match the mesh size")
    cov = np.zeros((n, 3, 3))
    if len(weights):
        i, j, w = weights.directed()
        rest = mesh.vertices[i] - mesh.vertices[j]
        cur = deformed[i] - deformed[j]
        outer = w[:, None, None] * rest[:, :, None] * cur[:, None, :]
        np.add.at(cov, i, outer)
        if alpha > 0 and prev_rotations is not None:
            np.add.at(cov, i, 2.0 * alpha * prev_rotations.matrices[j])
    if not np.isfinite(cov).all():
        raise NumericalError("non-finite covariance in rotation fit")
    u, _, vt = np.linalg.svd(cov)
    det = np.linalg.det(np.einsum("nab,nbc->nac", u, vt))
    flip = det < 0
    u[flip, :, 2] *= -1.0
    mats = np.einsum("nab,nbc->nac", u, vt)
    return RotationField(mats)


class _GlobalSystem:
    """Prefactorized sparse system for the position solve.

    The matrix 2L + beta*I over movable vertices depends only on topology,
    weights, the constraint pattern and beta, so one factorization serves
    every local-global iteration of a progressive run.
    """

    def __init__(self, mesh: Mesh, constraints: ConstraintSet,
                 weights: EdgeWeights, beta: float):
        n = mesh.n_vertices
        if not constraints.covers(n):
            raise ConfigurationError("constraint set does not cover the mesh")
        self.mesh = mesh
        self.weights = weights
        self.beta = float(beta)
        self.movable = constraints.movable
        self.known = np.concatenate([constraints.fixed, constraints.handles])
        self.local = np.full(n, -1, dtype=np.int64)
        self.local[self.movable] = np.arange(len(self.movable))
        m = len(self.movable)
        if m == 0:
            self.solve = None
            return
        i, j, w = weights.directed() if len(weights) else (
            np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        self.di, self.dj, self.dw = i, j, w
        both = (self.local[i] >= 0) & (self.local[j] >= 0)
        from_movable = self.local[i] >= 0
        diag = np.zeros(m)
        np.add.at(diag, self.local[i[from_movable]], 2.0 * w[from_movable])
        rows = np.concatenate([self.local[i[both]], np.arange(m)])
        cols = np.concatenate([self.local[j[both]], np.arange(m)])
        vals = np.concatenate([-2.0 * w[both], diag + self.beta])
        matrix = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
        self._check_rank(m, both, from_movable, i, j)
        try:
            self.solve = spla.splu(matrix).solve
        except RuntimeError as exc:
            raise RankError(f"global system is singular: {exc}") from exc

    def _check_rank(self, m, both, from_movable, i, j):
        if self.beta > 0:
            return
        adj = sp.csr_matrix(
            (np.ones(both.sum()), (self.local[i[both]], self.local[j[both]])),
            shape=(m, m),
        )
        n_comp, labels = csgraph.connected_components(adj, directed=False)
        attached = np.zeros(n_comp, dtype=bool)
        to_known = from_movable & (self.local[j] < 0)
        attached[np.unique(labels[self.local[i[to_known]]])] = True
        if not attached.all():
            comp = int(np.flatnonzero(~attached)[0])
            vertex = int(self.movable[np.flatnonzero(labels == comp)[0]])
            raise RankError(
                f"movable component containing vertex {vertex} has no constraint "
                "and beta=0; the system is rank-deficient"
            )

    def positions(self, rotations: RotationField, prev_positions: np.ndarray,
                  known_positions: np.ndarray) -> np.ndarray:
        """Solve for movable positions given rotations and boundary values."""
        n = self.mesh.n_vertices
        out = np.empty((n, 3))
        out[self.known] = known_positions
        if self.solve is None:
            return out
        m = len(self.movable)
        i, j, w = self.di, self.dj, self.dw
        from_movable = self.local[i] >= 0
        rest = self.mesh.vertices[i[from_movable]] - self.mesh.vertices[j[from_movable]]
        rsum = rotations.matrices[i[from_movable]] + rotations.matrices[j[from_movable]]
        rhs_terms = w[from_movable, None] * np.einsum("nba,nb->na", rsum, rest)
        rhs = np.zeros((m, 3))
        np.add.at(rhs, self.local[i[from_movable]], rhs_terms)
        to_known = from_movable & (self.local[j] < 0)
        if to_known.any():
            np.add.at(rhs, self.local[i[to_known]],
                      2.0 * w[to_known, None] * out[j[to_known]])
        if self.beta > 0:
            rhs += self.beta * np.asarray(prev_positions)[self.movable]
        sol = np.column_stack([self.solve(rhs[:, c]) for c in range(3)])
        if not np.isfinite(sol).all():
            raise NumericalError("global solve produced non-finite positions")
        out[self.movable] = sol
        return out


def global_step(mesh: Mesh, constraints: ConstraintSet, rotations: RotationField,
                weights: EdgeWeights, beta: float, prev_positions: np.ndarray,
                handle_positions: np.ndarray | None = None) -> np.ndarray:
    """One position solve with rotations held fixed.

    Fixed vertices sit at their pinned positions and handles at
    handle_positions (the final targets when not supplied); beta pulls
    movable vertices toward prev_positions.
    """
    system = _GlobalSystem(mesh, constraints, weights, beta)
    handles_at = constraints.targets if handle_positions is None else \
        np.asarray(handle_positions, dtype=np.float64).reshape(-1, 3)
    known = np.concatenate([constraints.pinned_positions, handles_at])
    return system.positions(rotations, np.asarray(prev_positions, dtype=np.float64), known)


@dataclass
class DeformationTrace:
    """Full record of a progressive run.

    snapshots[0] is the input mesh; snapshots[k] the converged positions after
    step k. Energies, rotations and handle positions are per step (length K).
    """

    snapshots: list
    handle_path: list
    arap_energies: list
    srarap_energies: list
    iteration_energies: list
    rotations: list
    converged: list
    params: DeformParams
    constraints: ConstraintSet
    warnings: list = field(default_factory=list)

    @property
    def final_positions(self) -> np.ndarray:
        return self.snapshots[-1]

    def interstep_displacement(self) -> float:
        """sum_k sum_i ||v^(k+1)_i - v^(k)_i||^2 over the whole trace."""
        total = 0.0
        for a, b in zip(self.snapshots, self.snapshots[1:]):
            total += float(np.sum((b - a) ** 2))
        return total


def handle_schedule(start: np.ndarray, targets: np.ndarray, lam: float,
                    steps: int) -> list:
    """Progressive handle positions: h^(k+1) = h^(k) + lam*(t - h^(k)).

    The last step snaps to the target exactly; with lam < 1 the recurrence
    alone never reaches it in finite K.
    """
    path = [np.asarray(start, dtype=np.float64).reshape(-1, 3).copy()]
    h = path[0]
    for k in range(steps):
        if k == steps - 1:
            h = np.asarray(targets, dtype=np.float64).reshape(-1, 3).copy()
        else:
            h = h + lam * (targets - h)
        path.append(h.copy())
    return path


def deform_progressive(mesh: Mesh, constraints: ConstraintSet,
                       params: DeformParams | None = None,
                       weights: EdgeWeights | None = None,
                       on_step=None) -> DeformationTrace:
    """Run the progressive deformation and return the full trace.

    Per step the handle advances along the schedule, then local rotation fits
    alternate with global solves until the relative change of the step
    objective (rigidity + rotation smoothness + beta * inter-step displacement)
    drops below rel_tol. Non-convergence within max_lg_iters is recorded as a
    warning, not an error.
    """
    params = params or DeformParams()
    if not constraints.covers(mesh.n_vertices):
        raise ConfigurationError("constraint set does not cover the mesh")
    if len(constraints.fixed) and not np.array_equal(
            constraints.pinned_positions, mesh.vertices[constraints.fixed]):
        raise ConfigurationError("fixed vertices must be pinned at their mesh positions")
    if weights is None:
        weights = edge_weights(mesh, params.weight_mode)

    system = _GlobalSystem(mesh, constraints, weights, params.beta)
    start_handles = mesh.vertices[constraints.handles]
    path = handle_schedule(start_handles, constraints.targets, params.lam, params.steps)

    snapshots = [mesh.vertices.copy()]
    arap_hist, srarap_hist, iter_hist, rot_hist, conv_hist = [], [], [], [], []
    warnings = []
    for k in range(params.steps):
        prev = snapshots[-1]
        known = np.concatenate([constraints.pinned_positions, path[k + 1]])
        current = prev.copy()
        current[constraints.fixed] = constraints.pinned_positions
        current[constraints.handles] = path[k + 1]
        def step_energy(pos, rot):
            total = srarap_energy(mesh, pos, weights, rot, params.alpha)
            if params.beta > 0:
                total += params.beta * float(np.sum((pos - prev) ** 2))
            return total

        rotations = None
        energies = []
        converged = False
        for it in range(params.max_lg_iters):
            rotations = fit_rotations(mesh, current, weights, params.alpha,
                                      prev_rotations=rotations)
            if it == 0:
                energies.append(step_energy(current, rotations))
            current = system.positions(rotations, prev, known)
            energies.append(step_energy(current, rotations))
            delta = abs(energies[-2] - energies[-1])
            if delta <= params.rel_tol * max(abs(energies[-2]), 1e-12):
                converged = True
                break
        if not converged:
            warnings.append(f"step {k}: no convergence in {params.max_lg_iters} iterations")
        snapshots.append(current)
        arap_hist.append(arap_energy(mesh, current, weights, rotations))
        srarap_hist.append(srarap_energy(mesh, current, weights, rotations, params.alpha))
        iter_hist.append(energies)
        rot_hist.append(rotations)
        conv_hist.append(converged)
        if on_step is not None:
            on_step(k + 1, params.steps, arap_hist[-1])
    return DeformationTrace(
        snapshots=snapshots,
        handle_path=path,
        arap_energies=arap_hist,
        srarap_energies=srarap_hist,
        iteration_energies=iter_hist,
        rotations=rot_hist,
        converged=conv_hist,
        params=params,
        constraints=constraints,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Trace persistence: step_0000.obj ... step_KKKK.obj plus trace.json
# ---------------------------------------------------------------------------

def write_trace(trace: DeformationTrace, mesh: Mesh, outdir) -> list:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, snap in enumerate(trace.snapshots):
        name = f"step_{k:04d}.obj"
        write_obj(mesh.with_vertices(snap), outdir / name)
        files.append(name)
    meta = {
        "params": trace.params.to_dict(),
        "snapshots": files,
        "arap_energies": trace.arap_energies,
        "srarap_energies": trace.srarap_energies,
        "iteration_energies": trace.iteration_energies,
        "converged": trace.converged,
        "warnings": trace.warnings,
        "handles": [int(h) for h in trace.constraints.handles],
        "handle_path": [h.tolist() for h in trace.handle_path],
        "targets": trace.constraints.targets.tolist(),
        "movable": [int(i) for i in trace.constraints.movable],
        "fixed": [int(i) for i in trace.constraints.fixed],
    }
    (outdir / "trace.json").write_text(json.dumps(meta, indent=1))
    return files + ["trace.json"]


@dataclass
class LoadedTrace:
    meshes: list           # one Mesh per snapshot
    meta: dict

    @property
    def base_mesh(self) -> Mesh:
        return self.meshes[0]

    @property
    def final_mesh(self) -> Mesh:
        return self.meshes[-1]

    def movable_set(self) -> np.ndarray:
        return np.array(self.meta["movable"], dtype=np.int64)


def read_trace(trace_dir) -> LoadedTrace:
    trace_dir = Path(trace_dir)
    meta_path = trace_dir / "trace.json"
    if not meta_path.exists():
        raise ConfigurationError(f"no trace.json under {trace_dir}")
    meta = json.loads(meta_path.read_text())
    meshes = [read_obj(trace_dir / name) for name in meta["snapshots"]]
    return LoadedTrace(meshes=meshes, meta=meta)
