"""Exception types raised by the engine."""


class VocoderError(Exception):
    """Base class for all engine errors."""


class ShapeError(VocoderError):
    """Tensor shapes or lengths are inconsistent with the operation."""


class ConfigError(VocoderError):
    """A model configuration violates its invariants."""


class InvertibilityError(VocoderError):
    """A 1x1 mixing matrix is singular or numerically unusable."""


class FormatError(VocoderError):
    """A model/mel/audio file is corrupt, truncated, or has a bad header."""


class SchemaError(FormatError):
    """A container file disagrees with the expected tensor schema."""
