"""Exception hierarchy shared across the toolkit."""


class AscaError(Exception):
    """Base class for all toolkit errors."""


class FormatError(AscaError):
    """Malformed file contents (bad RIFF header, bad model container)."""


class UnsupportedEncoding(AscaError):
    """WAV encoding outside PCM16 / IEEE float32, or bad channel count."""


class IoError(AscaError):
    """Filesystem failure while writing an artifact."""


class SizeError(AscaError, ValueError):
    """Input has the wrong length or dimensionality."""


class SpecError(AscaError, ValueError):
    """Invalid scene or region description."""


class ConfigError(AscaError, ValueError):
    """Inconsistent configuration (e.g. label set mismatch)."""


class DegenerateData(AscaError):
    """Regularized covariance is singular."""


class InsufficientData(AscaError):
    """Too few samples or classes to train."""


class TrainingDiverged(AscaError):
    """Loss became non-finite during training."""


class NoPeak(AscaError):
    """Cross-correlation has no usable peak."""


class AmbiguousDirection(AscaError):
    """Delays carry no directional information."""


class Infeasible(AscaError):
    """Fewer candidates than the input length."""


class TooLarge(AscaError):
    """Brute-force enumeration exceeds its size cap."""


class NotInDictionary(AscaError):
    """Truth word missing from the dictionary."""


class MissingSync(AscaError):
    """No synchronising chirp found in a recording."""
