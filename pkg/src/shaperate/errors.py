"""Exception hierarchy with the CLI exit-code contract.

Exit codes: 1 config/usage, 2 mesh/geometry, 3 solver, 4 derivative check.
"""


class ShapeRateError(Exception):
    exit_code = 1


class ConfigError(ShapeRateError):
    exit_code = 1


class MeshError(ShapeRateError):
    exit_code = 2


class MeshFormatError(MeshError):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TopologyError(MeshError):
    pass


class GeometryError(MeshError):
    pass


class MeshQueryError(MeshError):
    pass


class DeformationError(MeshError):
    """Deformation inadmissible (Lipschitz margin or reference-box violation)."""


class SolverError(ShapeRateError):
    exit_code = 3

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class CoercivityError(SolverError):
    """Indefinite or singular second-derivative operator."""


class SingularProblemError(SolverError):
    """No Dirichlet constraints and no zero-order term; minimizer not unique."""


class CheckError(ShapeRateError):
    exit_code = 4


class PreconditionError(CheckError):
    """A caller-supplied state fails its contract (stale minimizer, bad support)."""


class DerivativeCheckError(CheckError):
    """A configured derivative verification exceeded its tolerance."""
