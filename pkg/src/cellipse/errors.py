"""Exception types shared across the package."""


class CellipseError(Exception):
    """Base class for all errors raised by this package."""


class ImageFormatError(CellipseError):
    """Raised when image bytes cannot be decoded into an RGB raster."""


class DegenerateInputError(CellipseError):
    """Raised when an input lacks the variation an operation requires,
    e.g. fewer distinct colors than requested clusters."""


class EllipseFitError(CellipseError):
    """Raised when a point set does not determine an ellipse."""


class ConfigError(CellipseError):
    """Raised for unknown keys, malformed values or out-of-range parameters."""


class SceneGenerationError(CellipseError):
    """Raised when synthetic scene placement exhausts its rejection budget."""
