"""Exception types shared across the package."""


class ProofSearchError(Exception):
    """Base class for all package-specific errors."""


class NoGoalHeader(ProofSearchError):
    """Raised when a script has no lemma/theorem declaration with a quoted goal."""


class HeaderOverlap(ProofSearchError):
    """Raised when a span replacement would touch the goal header line."""


class EmptyAfterStrip(ProofSearchError):
    """Raised when wrapper stripping leaves no usable block text."""


class Unsalvageable(ProofSearchError):
    """Raised when no proof body can be recovered from a raw outline sample."""


class VerifierTimeout(ProofSearchError):
    """Raised by a backend when a check exceeds its time budget."""


class BackendDown(ProofSearchError):
    """Raised by a backend when the underlying session has died."""


class BackendUnavailable(ProofSearchError):
    """Raised when a proposal backend cannot be reached."""


class FixtureInvalid(ProofSearchError):
    """Raised when a synthetic-space document violates its invariants."""


class EmptyIndex(ProofSearchError):
    """Raised when finalizing a premise index with no entries."""


class StaleIndex(ProofSearchError):
    """Raised when querying a premise index that needs (re-)finalization."""


class DimensionMismatch(ProofSearchError):
    """Raised when a feature vector has the wrong length."""


class FormatVersionMismatch(ProofSearchError):
    """Raised when a model file carries an unsupported version tag."""


class CorruptModel(ProofSearchError):
    """Raised when a model file cannot be parsed."""


class LexiconInvalid(ProofSearchError):
    """Raised when a hint-lexicon file has the wrong shape."""


class MalformedRecord(ProofSearchError):
    """Raised when a log line cannot be decoded into a record."""


class SinkUnavailable(ProofSearchError):
    """Raised when writing to a closed or unwritable log sink."""


class BindFailure(ProofSearchError):
    """Raised when the HTTP service cannot bind its address."""
