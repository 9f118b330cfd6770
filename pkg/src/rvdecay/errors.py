"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class TailUndefinedError(ValueError):
    """The improper integral over [t, inf) does not converge for this kind."""


class NotSquareIntegrableError(ValueError):
    """The noise intensity is not in L^2(0, inf)."""


class IntegrationError(RuntimeError):
    """The ODE integrator could not continue.

    ``t_last`` is the last time reached with an accepted step.
    """

    def __init__(self, message, t_last):
        super().__init__(f"{message} (last valid t={t_last!r})")
        self.t_last = t_last


class SimulationError(RuntimeError):
    """An SDE path left the guarded region."""

    def __init__(self, message, t_fail):
        super().__init__(f"{message} (t={t_fail!r})")
        self.t_fail = t_fail


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=""):
        super().__init__(message)
        self.field = field
