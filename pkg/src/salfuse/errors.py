"""Exception types shared across the package."""


class SalfuseError(Exception):
    """Base class for all errors raised by salfuse."""


class ImageFormatError(SalfuseError, ValueError):
    """The file is not a PNG or JPEG we can decode."""


class CorruptImageError(SalfuseError, ValueError):
    """The file claims a supported format but its payload is unreadable."""


class ColorspaceError(SalfuseError, ValueError):
    pass


class ShapeError(SalfuseError, ValueError):
    """Array shapes or map dimensions disagree."""


class SegmentationError(SalfuseError, ValueError):
    pass


class GraphError(SalfuseError, RuntimeError):
    pass


class TrainingError(SalfuseError, RuntimeError):
    pass


class DataError(SalfuseError):
    """Bad manifest, missing dataset files, or nothing left to evaluate."""
