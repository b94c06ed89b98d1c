"""Exception hierarchy shared by every package of the toolkit."""

from typing import Optional


class HvacMbrlError(Exception):
    """Base class for all toolkit errors."""


class IntegrationError(HvacMbrlError, ArithmeticError):
    def __init__(self, component: str, message: Optional[str] = None):
        self.component = component
        super().__init__(
            message or f"non-finite derivative for state component {component}"
        )


class TraceParseError(HvacMbrlError, ValueError):
    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        column: Optional[str] = None,
    ):
        self.line = line
        self.column = column
        super().__init__(message)


class TraceValidationError(HvacMbrlError, ValueError):
    pass


class TraceExhaustedError(HvacMbrlError):
    pass


class EmptyBufferError(HvacMbrlError, ValueError):
    pass


class DimensionMismatchError(HvacMbrlError, ValueError):
    pass


class NumericError(HvacMbrlError, ArithmeticError):
    def __init__(self, layer: str):
        self.layer = layer
        super().__init__(f"non-finite activation in layer {layer}")


class NoWindowsError(HvacMbrlError, ValueError):
    pass


class DeviationGuardError(HvacMbrlError, ValueError):
    pass


class ActionBoundsError(HvacMbrlError, ValueError):
    pass


class PlanningError(HvacMbrlError, ValueError):
    pass


class ConfigError(HvacMbrlError, ValueError):
    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(message)


class CheckpointError(HvacMbrlError):
    pass


class ReportError(HvacMbrlError, ValueError):
    pass
