"""Exception hierarchy shared by all hybridfem modules."""


class HybridFEMError(Exception):
    """Base class for all library errors."""


class DegenerateElement(HybridFEMError):
    """Triangle with (numerically) collinear vertices."""


class ParseError(HybridFEMError):
    """Malformed mesh file.  Carries the 1-based offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonConformingMesh(HybridFEMError):
    """An edge is shared by more than two triangles."""


class UnsupportedDegree(HybridFEMError):
    """Polynomial degree outside the supported range for the requested space."""


class SingularLocalSystem(HybridFEMError):
    """A local projection/lifting system failed to factorize (basis bug)."""


class SingularLocalSolver(HybridFEMError):
    """An element-local solver in the hybridization path is singular."""


class SingularSystem(HybridFEMError):
    """The assembled global system is singular (mesh/space bug)."""


class InvalidStabilization(HybridFEMError):
    """Stabilization must be nonnegative and nonzero on every element."""


class NonPositiveDiffusion(HybridFEMError):
    """Diffusion coefficient is not strictly positive at a quadrature point."""


class TooLarge(HybridFEMError):
    """Diagnostic operation requested on a problem beyond its size limit."""


class ConfigError(HybridFEMError):
    """Invalid convergence-study configuration."""
