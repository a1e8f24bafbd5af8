"""Exception types shared across the toolkit."""


class SpeechInvError(Exception):
    """Base class for all toolkit errors."""


class EmptyAudio(SpeechInvError):
    """Raised when an audio buffer contains no samples."""


class TooShort(SpeechInvError):
    """Raised when a sequence is too short for the requested operation."""


class DimensionMismatch(SpeechInvError):
    """Raised when array shapes are inconsistent with each other."""


class BadAlignment(SpeechInvError):
    """Raised for overlapping or unsorted phone intervals."""


class BadLabel(SpeechInvError):
    """Raised for labels outside the phoneme inventory."""


class InsufficientSpeakers(SpeechInvError):
    """Raised when a corpus has too few speakers for a disjoint split."""


class BadSpec(SpeechInvError):
    """Raised for invalid synthetic-corpus parameters."""


class ManifestError(SpeechInvError):
    """Raised for unreadable or unsupported corpus manifests."""


class MissingTensor(SpeechInvError):
    """Raised when a manifest references a tensor file that does not exist."""


class BadTensorFile(SpeechInvError):
    """Raised when a tensor file is corrupt or has the wrong layout."""


class NumericalError(SpeechInvError):
    """Raised when NaN or Inf appears in model values or gradients."""


class GraphError(SpeechInvError):
    """Raised when backward is invoked without a recorded forward pass."""


class UndefinedCorrelation(SpeechInvError):
    """Raised when a correlation is requested for a constant sequence."""
