"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class ConfigurationError(ValueError):
    """Model or run configuration is inconsistent."""


class DataError(ValueError):
    """Input data is malformed or out of range."""


class DataFormatError(ValueError):
    """Binary or text file does not follow its documented layout."""


class AudioIOError(OSError):
    """Audio file missing or not in the expected format."""


class LexiconError(ValueError):
    """A word has no usable pronunciation."""

    def __init__(self, word: str, message: str | None = None):
        self.word = word
        super().__init__(message or f"no pronunciation for word {word!r}")


class UnresolvableWordError(ValueError):
    """Words that can be spliced neither from word nor phone segments."""

    def __init__(self, words):
        self.words = list(words)
        super().__init__("unresolvable words: " + ", ".join(repr(w) for w in self.words))


class SegmentLookupError(LookupError):
    """Requested unit has no segments in the inventory."""


class TokenizationError(ValueError):
    """Piece stream cannot be grouped into words."""


class InfeasibleAlignmentError(ValueError):
    """Too few frames to place every mandatory phone."""


class EvaluationError(ValueError):
    """Evaluation inputs are inconsistent (sequence mismatch, single class)."""


class TrainingDataError(ValueError):
    """Training set does not meet the trainer's requirements."""
