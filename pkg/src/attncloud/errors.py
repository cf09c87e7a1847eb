"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor/array dimensions do not satisfy an operation's contract."""


class ContractError(ValueError):
    """A precondition was violated (empty cloud, out-of-range argument, ...)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (unknown key, bad value, ...)."""


class FormatError(ValueError):
    """A file could not be parsed. Carries the path and byte offset."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class NumericsError(ArithmeticError):
    """A computation produced non-finite values (training abort, bad input)."""
