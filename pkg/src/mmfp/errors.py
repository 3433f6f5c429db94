"""Exception hierarchy shared by every module."""


class MMFPError(Exception):
    """Base class for all library errors."""


class ShapeError(MMFPError, ValueError):
    pass


class NumericError(MMFPError, FloatingPointError):
    """Non-finite value encountered; ``index`` locates the offending row or step."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class TrainingError(MMFPError, RuntimeError):
    """Training diverged; ``last_finite_epoch`` is -1 if no epoch finished cleanly."""

    def __init__(self, message, last_finite_epoch=-1):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class SamplerError(MMFPError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ValidationError(MMFPError, ValueError):
    pass


class ConfigError(MMFPError, ValueError):
    pass


class MissingEmbeddingError(MMFPError, KeyError):
    def __init__(self, text):
        super().__init__(f"no embedding for text {text!r}")
        self.text = text

    def __str__(self):
        return self.args[0]


class ParseError(MMFPError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
