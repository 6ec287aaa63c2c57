class FemlabError(Exception):
    """Base class for all errors raised by femlab."""


class MeshError(FemlabError):
    pass


class SpaceError(FemlabError):
    pass


class CoefficientError(FemlabError):
    """Coefficient data violates the uniform ellipticity bounds."""

    def __init__(self, message: str, element: int | None = None):
        super().__init__(message)
        self.element = element


class SingularSystemError(FemlabError):
    """A linear system is singular or too ill-conditioned to trust."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class ConfigError(FemlabError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
