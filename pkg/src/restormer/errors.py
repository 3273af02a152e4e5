"""Exception hierarchy shared by every module of the package."""


class RestormerError(Exception):
    pass


class DimensionError(RestormerError, ValueError):
    """Tensor extents are incompatible with the requested operation."""


class ConfigError(RestormerError, ValueError):
    pass


class NumericError(RestormerError, ArithmeticError):
    """A numeric guard tripped (non-finite values, vanishing temperature, ...)."""


class ResourceError(RestormerError, MemoryError):
    pass


class UsageError(RestormerError, RuntimeError):
    pass


class FormatError(RestormerError, ValueError):
    pass


class IntegrityError(FormatError):
    pass


class ParseError(FormatError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
