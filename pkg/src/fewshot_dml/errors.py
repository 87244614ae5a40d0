"""Exception types shared across the package."""


class FewshotDmlError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FewshotDmlError):
    """A configuration is inconsistent: bad layer chain, unknown key, illegal mode."""


class ShapeError(FewshotDmlError):
    """An array has the wrong shape for the requested operation."""


class DatasetError(FewshotDmlError):
    """A dataset violates its invariants (mixed dims, missing class, bad label)."""


class InputError(FewshotDmlError):
    """A scalar argument is out of its legal range."""


class TrainingError(FewshotDmlError):
    """Training produced a non-finite quantity; carries where it happened."""

    def __init__(self, message, epoch=None, layer=None):
        super().__init__(message)
        self.epoch = epoch
        self.layer = layer


class ParseError(FewshotDmlError):
    """A file failed to parse; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class CheckpointVersionError(FewshotDmlError):
    """A checkpoint declares a format version this build does not support."""
