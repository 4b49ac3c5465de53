"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class UnstableQueueError(ConfigError):
    """Background load at or above link capacity; the queue has no steady state."""


class DataError(ValueError):
    """Observation data is unusable (non-finite entries, shape mismatch)."""


class SingularityError(ValueError):
    """Density evaluated exactly at a non-integrable boundary point."""


class DegenerateSupportError(ValueError):
    """All candidate densities vanish for some observation."""


class SupportMismatchError(ValueError):
    """A quadrature grid has no overlap with the integrand's support."""


class NumericalSupportError(ValueError):
    """All quadrature weights underflowed; grids are too narrow or misplaced."""


class NoCleanLinkError(ValueError):
    """Every link is attacked; no information about the offset survives."""
