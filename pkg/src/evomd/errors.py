"""Exception hierarchy shared by every stage.

``ValidationError`` subclasses map to CLI exit code 2, ``StageError`` to 3.
"""


class EvomdError(Exception):
    pass


class ValidationError(EvomdError, ValueError):
    pass


class FrameFormatError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrajectoryError(ValidationError):
    pass


class FormulaError(ValidationError):
    """Formula text rejected; ``kind`` names the failure."""

    kind = "invalid"


class EmptyFormulaError(FormulaError):
    kind = "empty"


class IllegalCharacterError(FormulaError):
    kind = "illegal_character"


class ZeroCountError(FormulaError):
    kind = "zero_count"


class DuplicateElementError(FormulaError):
    kind = "duplicate_element"


class NonCanonicalError(FormulaError):
    kind = "non_canonical"


class NetworkError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class StageError(EvomdError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
