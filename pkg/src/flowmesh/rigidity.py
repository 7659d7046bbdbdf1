"""Rigidity diagnostics comparing a deformed mesh against its rest pose.

Two scalars: the mean edge length ratio over movable-movable edges (1.0 means
length-preserving) and the mean per-face residual after aligning each rest
face to its deformed counterpart with a best-fit (Kabsch) rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError, UndefinedMetricError
from .mesh import Mesh

_CENTERED_TOL = 1e-9
_DEGENERATE_AREA = 1e-14


@dataclass(frozen=True)
class RigidityReport:
    melr: float
    m_arap_error: float
    per_face_errors: np.ndarray
    movable_edges: int
    faces: int
    degenerate_faces: int

    def to_dict(self) -> dict:
        return {
            "melr": self.melr,
            "m_arap_error": self.m_arap_error,
            "faces": self.faces,
            "movable_edges": self.movable_edges,
        }


def kabsch_rotation(p: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    """Optimal rotation aligning centered points p onto centered points p_hat.

    Degenerate (collinear) sets are resolved by flipping the singular vector
    of the smallest singular value when the determinant comes out negative.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    p_hat = np.asarray(p_hat, dtype=np.float64).reshape(-1, 3)
    if p.shape != p_hat.shape:
        raise ConfigurationError("point sets must have matching shapes")
    if np.abs(p.mean(axis=0)).max() > _CENTERED_TOL \
            or np.abs(p_hat.mean(axis=0)).max() > _CENTERED_TOL:
        raise ConfigurationError("kabsch_rotation expects centered point sets")
    h = p.T @ p_hat
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    if np.linalg.det(v @ u.T) < 0:
        v = v.copy()
        v[:, 2] *= -1.0
    return v @ u.T


def face_arap_fit(orig: np.ndarray, deformed: np.ndarray):
    """Best-fit rotation residual for one triangle; flags degenerate rest faces.

    Returns (error, degenerate). A zero-area rest triangle falls back to the
    identity rotation instead of aborting, so metrics survive imperfect
    depth meshes.
    """
    orig = np.asarray(orig, dtype=np.float64).reshape(3, 3)
    deformed = np.asarray(deformed, dtype=np.float64).reshape(3, 3)
    p = orig - orig.mean(axis=0)
    p_hat = deformed - deformed.mean(axis=0)
    area2 = np.linalg.norm(np.cross(orig[1] - orig[0], orig[2] - orig[0]))
    if area2 <= _DEGENERATE_AREA:
        return float(np.sum((p - p_hat) ** 2)), True
    rot = kabsch_rotation(p, p_hat)
    return float(np.sum((p @ rot.T - p_hat) ** 2)), False


def face_arap_error(orig: np.ndarray, deformed: np.ndarray) -> float:
    return face_arap_fit(orig, deformed)[0]


def mean_arap_error(mesh: Mesh, deformed: np.ndarray) -> float:
    """Mean of the per-face best-fit residual over all faces."""
    return float(per_face_errors(mesh, deformed).mean())


def per_face_errors(mesh: Mesh, deformed: np.ndarray) -> np.ndarray:
    deformed = np.asarray(deformed, dtype=np.float64).reshape(-1, 3)
    if mesh.n_faces == 0:
        raise UndefinedMetricError("mesh has no faces")
    if len(deformed) != mesh.n_vertices:
        raise ConfigurationError("deformed positions must match the mesh size")
    errors = np.empty(mesh.n_faces)
    for k, face in enumerate(mesh.faces):
        errors[k] = face_arap_fit(mesh.vertices[face], deformed[face])[0]
    return errors


def melr(mesh: Mesh, deformed: np.ndarray, movable) -> float:
    """Mean deformed/rest length ratio over unique movable-movable edges."""
    deformed = np.asarray(deformed, dtype=np.float64).reshape(-1, 3)
    movable_mask = np.zeros(mesh.n_vertices, dtype=bool)
    movable_mask[np.asarray(movable, dtype=np.int64)] = True
    edges = mesh.edges()
    if len(edges) == 0:
        raise UndefinedMetricError("mesh has no edges")
    keep = movable_mask[edges[:, 0]] & movable_mask[edges[:, 1]]
    edges = edges[keep]
    if len(edges) == 0:
        raise UndefinedMetricError("no movable-movable edges; MELR is undefined")
    rest = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    if (rest == 0).any():
        raise DegenerateGeometryError("zero-length rest edge; MELR is undefined")
    cur = np.linalg.norm(deformed[edges[:, 0]] - deformed[edges[:, 1]], axis=1)
    return float(np.mean(cur / rest))


def rigidity_report(mesh: Mesh, deformed: np.ndarray, movable) -> RigidityReport:
    errors = per_face_errors(mesh, deformed)
    degenerate = 0
    for face in mesh.faces:
        p = mesh.vertices[face]
        if np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])) <= _DEGENERATE_AREA:
            degenerate += 1
    movable_mask = np.zeros(mesh.n_vertices, dtype=bool)
    movable_mask[np.asarray(movable, dtype=np.int64)] = True
    edges = mesh.edges()
    n_movable_edges = int((movable_mask[edges[:, 0]] & movable_mask[edges[:, 1]]).sum()) \
        if len(edges) else 0
    return RigidityReport(
        melr=melr(mesh, deformed, movable),
        m_arap_error=float(errors.mean()),
        per_face_errors=errors,
        movable_edges=n_movable_edges,
        faces=mesh.n_faces,
        degenerate_faces=degenerate,
    )
