"""Exception types shared across the package."""


class SimconError(Exception):
    """Base class for all errors raised by this package."""


class ZeroRow(SimconError, ValueError):
    def __init__(self, index: int):
        super().__init__(f"row {index} has (near) zero norm")
        self.index = index


class ShapeMismatch(SimconError, ValueError):
    pass


class DimMismatch(ShapeMismatch):
    pass


class EmptyInput(SimconError, ValueError):
    pass


class NonFinite(SimconError, ValueError):
    pass


class NonFiniteEvaluation(NonFinite):
    pass


class EmptyPositiveSet(SimconError, ValueError):
    def __init__(self, anchor: int):
        super().__init__(f"anchor {anchor} has an empty positive set")
        self.anchor = anchor


class InvalidSpec(SimconError, ValueError):
    pass


class ConfigError(SimconError, ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


class NonFiniteLoss(SimconError, RuntimeError):
    def __init__(self, step: int, diagnostics: dict | None = None):
        super().__init__(f"non-finite loss or gradient at step {step}")
        self.step = step
        self.diagnostics = diagnostics or {}
