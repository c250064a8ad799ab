"""Exception types shared across the package."""


class TicketRouterError(Exception):
    """Base class for all package errors."""


class ParseError(TicketRouterError):
    """A corpus file could not be parsed."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class ValidationError(TicketRouterError):
    """Input data violates a structural invariant."""


class ConfigError(TicketRouterError):
    """A configuration value is missing or inconsistent."""


class PipelineError(TicketRouterError):
    """A pipeline command cannot run, e.g. a prerequisite artifact is missing."""
