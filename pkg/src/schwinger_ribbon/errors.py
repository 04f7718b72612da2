"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid input parameters or inconsistent objects."""


class CapacityError(ValidationError):
    """A requested Hilbert space or array exceeds the configured maximum."""


class ConvergenceError(RuntimeError):
    """An iterative numerical method did not reach its tolerance."""


class EquivalenceError(AssertionError):
    """Two Hamiltonians expected to coincide differ beyond tolerance.

    ``details`` carries the worst matrix element and the states involved.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}
