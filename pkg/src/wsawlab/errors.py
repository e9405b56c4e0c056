"""Exception types shared across the package."""


class WsawError(Exception):
    """Base class for package errors."""


class ConfigError(WsawError, ValueError):
    """Invalid parameters or configuration."""


class DimensionMismatchError(ConfigError):
    """A field or site does not match the lattice it is used with."""


class InvalidMassError(ConfigError):
    """Nonpositive mass for a torus Green function."""


class DivergentIntegralError(ConfigError):
    """The requested lattice integral diverges (recurrent dimension)."""


class IncompatibleProjectionError(ConfigError):
    """Target torus side does not divide the source structure."""


class DomainError(ConfigError):
    """Couplings outside the regime an operation is valid for."""


class CapabilityError(WsawError):
    """The request exceeds what the numerical backend supports."""


class IdentityViolation(WsawError):
    """An exact identity failed beyond floating-point slack."""
