class ConvergenceError(ArithmeticError):
    """A numerical kernel failed to converge."""


class TensorFormatError(ValueError):
    """Malformed TNS3 file. ``lineno`` is 1-based, or None when not tied to a line."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class DegenerateFiberError(ValueError):
    def __init__(self, subject, window):
        super().__init__(
            f"fiber (subject={subject}, window={window}) is constant over the voxel mode"
        )
        self.subject = subject
        self.window = window


class ConfigError(ValueError):
    """Invalid experiment configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
