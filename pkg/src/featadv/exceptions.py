"""Exception types shared across the package."""


class FeatAdvError(Exception):
    """Base class for all package errors."""


class ShapeError(FeatAdvError):
    """Tensor shapes are incompatible with an operation or layer."""


class NumericError(FeatAdvError):
    """A computation produced or received non-finite values."""


class SpecError(FeatAdvError):
    """A network spec is invalid (bad layer, unknown name, shape inference failure)."""


class RangeError(FeatAdvError):
    """Pixel values outside the valid [0, 255] range."""


class DegenerateInputError(FeatAdvError):
    """Inputs are degenerate for the requested operation (e.g. source == guide)."""


class NoAdversaryError(FeatAdvError):
    """Label-adversary search failed for every penalty weight.

    Carries ``best_margin``, the best achieved score margin toward the target
    label (negative means the target never became the argmax).
    """

    def __init__(self, message, best_margin):
        super().__init__(message)
        self.best_margin = best_margin


class FormatError(FeatAdvError):
    """A serialized file is malformed or fails its checksum."""


class VersionError(FormatError):
    """A serialized file has an unsupported format version."""
