"""Exception types shared across the package; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or incompatible settings (exit code 2)."""


class DataFormatError(ValueError):
    """Malformed dataset, checkpoint or field file (exit code 3)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(ArithmeticError):
    """Training produced a non-finite loss (exit code 4)."""
