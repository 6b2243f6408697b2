"""Exception types shared across the package."""


class KinwaveError(Exception):
    """Base class for all package-specific errors."""


class DomainError(KinwaveError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class CapacityError(KinwaveError, ValueError):
    """A requested flow exceeds the capacity of a flux function."""


class AdmissibilityError(KinwaveError, ValueError):
    """A departure profile violates nonnegativity, caps, or mass constraints."""


class ConfigurationError(KinwaveError, ValueError):
    """A network, scenario, or solver configuration is invalid."""


class ScenarioError(KinwaveError, ValueError):
    """A scenario file failed to parse or validate."""


class LoadingError(KinwaveError, RuntimeError):
    """Network loading failed to complete (e.g. mass did not drain)."""
