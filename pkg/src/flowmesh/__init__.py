"""Depth-map meshing, rigidity-preserving deformation, deformation vector
flow fields, rigidity diagnostics and a drag-editing optimization kernel."""

from .arap import DeformParams, DeformationTrace, deform_progressive
from .depthmesh import ConstraintSet, DepthMap, DragSpec2D, depth_to_mesh, lift_drag_spec
from .flow import FlowField, SampledFlow, compute_flow, grid_candidates, sample_flow
from .mesh import EdgeWeights, Mesh, Projection2D, build_adjacency, cotangent_weights, project_2d
from .rigidity import RigidityReport, mean_arap_error, melr, rigidity_report

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet", "DeformParams", "DeformationTrace", "DepthMap", "DragSpec2D",
    "EdgeWeights", "FlowField", "Mesh", "Projection2D", "RigidityReport",
    "SampledFlow", "build_adjacency", "compute_flow", "cotangent_weights",
    "deform_progressive", "depth_to_mesh", "grid_candidates", "lift_drag_spec",
    "mean_arap_error", "melr", "project_2d", "rigidity_report", "sample_flow",
    "__version__",
]
