"""Exception hierarchy shared by every module of the package."""


class KoopmanLambertError(Exception):
    """Base class for all package errors."""


class DomainError(KoopmanLambertError, ValueError):
    """A point lies outside the basis domain box."""

    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class ResourceLimitError(KoopmanLambertError):
    """A requested basis or grid exceeds a configured size cap."""


class AssemblyError(KoopmanLambertError):
    """Koopman matrix assembly produced a non-finite value."""


class DecompositionError(KoopmanLambertError):
    """The eigensolver failed."""


class SpectralConsistencyError(KoopmanLambertError):
    """Propagated observables carry an imaginary residue above tolerance."""


class SingularGeometryError(KoopmanLambertError, ValueError):
    """A state sits on a coordinate singularity of the element map."""


class InversionError(KoopmanLambertError, ValueError):
    """Elements do not map back to a physical spherical state."""


class DegenerateGeometryError(KoopmanLambertError, ValueError):
    """Transfer geometry does not define an orbital plane."""


class NoSolutionError(KoopmanLambertError):
    """No Lambert solution exists for the requested revolutions and time."""


class SolverError(KoopmanLambertError):
    """An iterative solver failed to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class SeedError(SolverError):
    """The initial guess of a shooting solve is not propagable."""


class IntegrationError(KoopmanLambertError):
    """Numerical integration failed."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time
