"""Exception types raised across the package."""


class NumericError(ArithmeticError):
    """A computation produced non-finite or ill-conditioned values."""


class EstimationError(RuntimeError):
    """Sampling-based bound estimation could not produce a value."""


class ExtractionError(RuntimeError):
    """A solver result cannot be turned into a valid funnel."""


class PropagationError(RuntimeError):
    """Closed-loop integration diverged.

    Parameters
    ----------
    message : str
        Human readable description.
    t : float
        Time at which the state became non-finite.
    """

    def __init__(self, message, t):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


class FunnelIOError(OSError):
    """A funnel or configuration file is unreadable, corrupt or invalid."""


class SynthesisError(RuntimeError):
    """The funnel SDP did not reach an optimal solution.

    ``status`` is the normalized solver status (``"infeasible"`` or
    ``"numerical-trouble"``).
    """

    def __init__(self, message, status):
        super().__init__(message)
        self.status = status
