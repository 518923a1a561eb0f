"""Exception types shared across the toolkit."""


class CaseFormatError(ValueError):
    """A case or partition file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """Parsed data violates a structural invariant."""


class TopologyError(ValueError):
    """The network graph is unusable (disconnected, no slack, ...)."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""
