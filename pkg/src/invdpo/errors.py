"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class NumericDomainError(ArithmeticError):
    pass


class StateError(RuntimeError):
    pass


class FormatError(ValueError):
    """Malformed binary file. Carries the byte offset and section where parsing stopped."""

    def __init__(self, message, offset=None, section=None):
        self.offset = offset
        self.section = section
        where = []
        if section is not None:
            where.append(f"section {section!r}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class TrainingError(RuntimeError):
    def __init__(self, message, last_good_step=None):
        self.last_good_step = last_good_step
        if last_good_step is not None:
            message = f"{message} (last good step {last_good_step})"
        super().__init__(message)


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
