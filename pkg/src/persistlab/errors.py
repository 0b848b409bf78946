"""Exception hierarchy shared by all persistlab modules."""


class PersistlabError(Exception):
    """Base class for every error raised by the library."""


class StructuralError(PersistlabError, ValueError):
    """Declared dimensions or field shapes are inconsistent."""


class GridError(PersistlabError, ValueError):
    pass


class SingularOperatorError(PersistlabError):
    """A linear system could not be solved.

    ``condition`` carries a 1-norm condition estimate when one is available.
    """

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(PersistlabError):
    """An iteration stopped before meeting its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class PositivityError(PersistlabError):
    """A quantity required to be positive is not."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class PreconditionError(PersistlabError, ValueError):
    """Inputs violate a hypothesis of the routine being called."""


class StabilityError(PreconditionError):
    """Explicit time step exceeds the diffusive stability bound."""


class CertificationError(PersistlabError):
    """A structural certificate could not be produced.

    ``reason`` is a short machine-readable label, ``detail`` free text.
    """

    def __init__(self, reason, detail=""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail
