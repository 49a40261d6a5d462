# core/errors.py
from typing import Optional


class RecSchemaError(Exception):
    """Base de todos os erros da biblioteca."""


class ShapeError(RecSchemaError, ValueError):
    pass


class DomainError(RecSchemaError, ValueError):
    """Valor fora do domínio documentado da operação."""


class NumericalError(RecSchemaError):
    def __init__(self, msg: str, step: Optional[int] = None, name: Optional[str] = None):
        super().__init__(msg)
        self.step = step
        self.name = name


class ConfigError(RecSchemaError):
    pass


class ParseError(RecSchemaError):
    def __init__(self, msg: str, index: int):
        super().__init__(f"{msg} (token {index})")
        self.index = index


class ConstraintError(RecSchemaError):
    def __init__(self, msg: str, report: Optional[dict] = None):
        super().__init__(msg)
        self.report = report or {}


class VerificationError(RecSchemaError):
    pass


class CheckpointError(RecSchemaError):
    pass
