class ConsentError(Exception):
    """Base class for every error raised by the toolkit."""
    exit_code = 1


class ConfigError(ConsentError):
    exit_code = 2


class ValidationError(ConsentError):
    exit_code = 2


class DimensionError(ConsentError, ValueError):
    exit_code = 2


class TapeError(ConsentError, RuntimeError):
    """Gradient tape misuse (second backward, loss recorded elsewhere)."""
    exit_code = 1


class DatasetError(ConsentError):
    exit_code = 2


class ManifestError(DatasetError):
    exit_code = 2


class BoxOutOfBoundsError(ValidationError):
    exit_code = 2


class CoverageError(ValidationError):
    def __init__(self, missing, extra):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(
            f"Prediction coverage mismatch: missing={self.missing[:20]} extra={self.extra[:20]}"
        )


class DatasetIOError(ConsentError):
    exit_code = 3


class MissingImageError(DatasetIOError):
    exit_code = 3


class ModelFormatError(ConsentError):
    exit_code = 3


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class NumericalError(ConsentError, FloatingPointError):
    exit_code = 4
