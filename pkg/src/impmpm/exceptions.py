"""Exception hierarchy for the simulator."""


class MPMError(Exception):
    """Base class for all simulator errors."""


class ParameterError(MPMError, ValueError):
    """Invalid physical or numerical parameter."""


class ConfigError(MPMError, ValueError):
    """Malformed scene configuration. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptySetError(MPMError, ValueError):
    """An operation produced or received an empty particle set."""


class DomainError(MPMError, ValueError):
    """A particle lies outside [0, grid_lim]^3."""


class InvertedElementError(MPMError, ArithmeticError):
    """Deformation gradient with det(F) <= 0."""


class SingularMatrixError(MPMError, ArithmeticError):
    """Matrix that must be inverted is singular."""


class SimulationAborted(MPMError, RuntimeError):
    """Non-finite or inadmissible state encountered during a run."""


class TraceFormatError(MPMError, ValueError):
    """Trace directory is corrupt, truncated or fails validation."""
