"""Exception hierarchy shared across the package.

Grouped by how the CLI maps them to exit codes: user/configuration problems,
empty or degenerate results, and numerical failures.
"""


class FlowMeshError(Exception):
    """Base class for all package errors."""


class StructuralError(FlowMeshError):
    """Mesh topology is inconsistent (bad face indices, degenerate faces)."""


class DegenerateGeometryError(FlowMeshError):
    """Geometry too degenerate to operate on (zero-area face, zero-length edge)."""


class ConfigurationError(FlowMeshError):
    """Invalid parameters or missing required inputs."""


class EmptyMeshError(FlowMeshError):
    """Meshing removed every face; thresholds are echoed in the message."""


class UnmappedHandleError(FlowMeshError):
    """A drag handle pixel has no mesh vertex within the snap radius."""


class UndefinedMetricError(FlowMeshError):
    """A metric's domain is empty (e.g. no movable-movable edges for MELR)."""


class RankError(FlowMeshError):
    """The global linear system is singular (unconstrained component with beta=0)."""


class NumericalError(FlowMeshError):
    """Non-finite values or a non-convergent numerical procedure."""
