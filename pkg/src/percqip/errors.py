"""Exception types raised across the package."""


class PercqipError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PercqipError, ValueError):
    """A parameter is outside its admissible range."""


class DomainError(PercqipError, ValueError):
    """A point or region lies outside the domain an operation requires."""


class DegenerateConfigurationError(PercqipError, ValueError):
    """Exact distance ties could not be resolved by the tie-breaking jitter."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class ParseError(PercqipError, ValueError):
    """A configuration or run file is malformed."""

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class NonConvergenceError(PercqipError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class StepRejectedError(PercqipError, RuntimeError):
    """A proposed diffusion step needed more reflections than allowed."""


class SimulationFailureError(PercqipError, RuntimeError):
    """A path could not be advanced even at the smallest sub-step."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
