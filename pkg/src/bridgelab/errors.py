class BridgeLabError(Exception):
    pass


class DomainError(BridgeLabError, ValueError):
    """An argument lies outside the operation's mathematical domain."""


class ConfigurationError(BridgeLabError, ValueError):
    pass


class StateError(BridgeLabError, RuntimeError):
    pass


class EvaluationError(BridgeLabError, ArithmeticError):
    pass


class ParseError(BridgeLabError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
