"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` used by the CLI
(exit lines) and the service (error payloads).
"""


class LatentRomError(Exception):
    category = "internal-error"


class ShapeError(LatentRomError):
    """Array dimensions incompatible with an operation."""

    category = "shape-error"


class StateError(LatentRomError):
    """Operation invoked out of order (e.g. backward before forward)."""

    category = "state-error"


class SpecError(LatentRomError):
    """Inconsistent architecture/library specification."""

    category = "spec-error"


class ConfigError(LatentRomError):
    """Bad run configuration."""

    category = "config-error"


class DivergenceError(LatentRomError):
    """Non-finite values during a rollout or ODE solve."""

    category = "divergence-error"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SolverError(LatentRomError):
    """High-fidelity solver failed to converge."""

    category = "solver-error"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DataError(LatentRomError):
    """Malformed archive, bundle or external input."""

    category = "data-error"


class MigrationError(DataError):
    """Persisted artifact written by an incompatible version."""

    category = "version-error"
