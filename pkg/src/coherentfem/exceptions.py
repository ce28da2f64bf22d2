"""Exception types raised across the package."""


class CoherentFEMError(Exception):
    """Base class for all package errors."""


class GeometryError(CoherentFEMError, ValueError):
    """Point sets that cannot be triangulated or located."""


class ValidationError(CoherentFEMError, ValueError):
    """Inputs violating a documented precondition."""


class ConfigError(ValidationError):
    """Invalid or unsupported pipeline configuration."""


class IntegrationError(CoherentFEMError, RuntimeError):
    """Failure of the adaptive ODE integrator.

    Attributes
    ----------
    time : float
        Integration time at which the failure occurred.
    particles : ndarray or None
        Indices of the offending particles, when known.
    """

    def __init__(self, message, time=None, particles=None):
        super().__init__(message)
        self.time = time
        self.particles = particles


class SingularityError(CoherentFEMError, ArithmeticError):
    """Singular or ill-conditioned flow-map Jacobian."""


class AssemblyError(CoherentFEMError, RuntimeError):
    """Finite-element assembly failure."""


class SolverError(CoherentFEMError, RuntimeError):
    """Eigensolver failure."""


class InfeasibleError(CoherentFEMError, ValueError):
    """A requested data degradation cannot satisfy the dataset invariants."""


class ParseError(CoherentFEMError, ValueError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
