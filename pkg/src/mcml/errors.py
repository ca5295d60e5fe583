"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user-supplied configuration (bad sizes, malformed files, flags)."""


class NumericalError(RuntimeError):
    """Computation cannot proceed or produce a meaningful result."""


class InfeasibleExactError(NumericalError):
    """Exact computation requested above the feasibility cap."""


class DegenerateWeightsError(NumericalError):
    """All importance weights vanished or an instrumental density was zero."""


class EvalOverflowError(NumericalError):
    """Value-domain evaluation overflowed double precision despite shifting."""
