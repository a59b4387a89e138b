"""Exception hierarchy shared by all modules.

Each class carries a ``category`` used by the CLI to pick an exit code.
"""


class CoolromError(Exception):
    category = "validation"


class ValidationError(CoolromError, ValueError):
    category = "validation"


class ParseError(ValidationError):
    category = "validation"


class OutOfRangeError(CoolromError, ValueError):
    category = "validation"


class ConvergenceError(CoolromError, RuntimeError):
    category = "convergence"

    def __init__(self, message, station=None):
        super().__init__(message)
        self.station = station


class DivergenceError(CoolromError, RuntimeError):
    category = "divergence"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
