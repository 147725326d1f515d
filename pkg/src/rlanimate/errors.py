"""Exception hierarchy shared across the package."""


class RLAnimateError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(RLAnimateError, ValueError):
    """A caller broke a precondition (shape, range, ordering)."""


class ValidationError(RLAnimateError, ValueError):
    """Input data failed a domain check (limits, finiteness, encodings)."""


class ConfigurationError(RLAnimateError, ValueError):
    """A configuration value is invalid. ``field`` holds its dotted path when known."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class ParseError(RLAnimateError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class MappingError(RLAnimateError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class GenerationError(RLAnimateError, ValueError):
    """A synthetic clip could not be produced (e.g. target outside the reachable cone)."""

    def __init__(self, message, joint=None):
        super().__init__(message)
        self.joint = joint


class StateError(RLAnimateError, RuntimeError):
    pass


class NumericFault(RLAnimateError, ArithmeticError):
    """Non-finite values appeared. ``where`` names the tensor or loss component, ``step`` the index."""

    def __init__(self, message, where=None, step=None):
        parts = [message]
        if where is not None:
            parts.append(f"in {where}")
        if step is not None:
            parts.append(f"at step {step}")
        super().__init__(" ".join(parts))
        self.where = where
        self.step = step


class VersionMismatch(RLAnimateError):
    def __init__(self, expected, found):
        super().__init__(f"signal layout version mismatch: checkpoint has {expected!r}, manifest has {found!r}")
        self.expected = expected
        self.found = found
