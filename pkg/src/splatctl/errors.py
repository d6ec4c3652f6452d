"""Exception types shared across the package."""


class SplatError(Exception):
    """Base for all package-specific failures (CLI maps these to exit 2)."""


class ConfigurationError(SplatError, ValueError):
    """A scenario or operation was configured with invalid values."""


class AlignmentError(SplatError, ValueError):
    """Per-primitive sequences that must align by id do not."""


class PoisonedGradientError(SplatError, ValueError):
    """A non-finite gradient was fed to a streaming statistic."""


class UndefinedCorrectionError(SplatError, ValueError):
    """Bias correction queried on a state with zero updates."""


class ExportError(SplatError, OSError):
    """An artifact could not be written; carries the target path."""

    def __init__(self, path, reason):
        super().__init__(f"export to {path!r} failed: {reason}")
        self.path = path
        self.reason = reason


class TraceSchemaError(SplatError, ValueError):
    """A replay trace record violates the trace schema."""

    def __init__(self, lineno, reason):
        super().__init__(f"trace line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason
