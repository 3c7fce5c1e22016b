"""Exception hierarchy.

Every error raised by the library derives from :class:`StegError`. The CLI maps
the three families below onto its exit codes.
"""


class StegError(Exception):
    """Base class for all library errors."""


class UsageError(StegError, ValueError):
    """Bad input supplied by the caller (exit code 1)."""


class ExtractionError(StegError):
    """Extraction produced no trustworthy message (exit code 2)."""


class ResourceError(StegError, OSError):
    """I/O or network failure while reaching a carrier or file (exit code 3)."""


# codec
class ElementOutOfRange(UsageError):
    pass


class OutputTooShort(UsageError):
    """Model output is shorter than the message slice; chunk the message."""


class LengthMismatch(UsageError):
    pass


class SumOutOfRange(ExtractionError):
    """stego + difference left the byte range: wrong carrier or wrong model."""


# model
class ShapeMismatch(UsageError):
    pass


class InvalidModel(UsageError):
    pass


class EmptyCarrier(UsageError):
    pass


class EmptyDataset(UsageError):
    pass


class InconsistentOutputLength(UsageError):
    pass


class MagnitudeOverflow(UsageError):
    pass


class UnsupportedVersion(UsageError):
    pass


class CorruptModel(UsageError):
    pass


# carrier
class InvalidLocation(UsageError):
    pass


class InvalidRule(UsageError):
    pass


class SegmentOutOfBounds(UsageError):
    pass


class CorpusExhausted(UsageError):
    pass


class NotFound(ResourceError):
    pass


class FetchFailed(ResourceError):
    pass


class IoFailure(ResourceError):
    pass


# protocol
class MTooLarge(UsageError):
    pass


class IncompleteAuthorization(UsageError):
    """One of difference, location or model is missing from a set."""


class BundleFormatError(UsageError):
    pass


class ChannelArtifactMismatch(UsageError):
    pass


class CarrierChanged(ExtractionError):
    pass


class AllSetsFailed(ExtractionError):
    def __init__(self, failures, errors=()):
        self.failures = list(failures)
        # underlying exceptions; None where the set extracted but failed verification
        self.errors = list(errors)
        lines = "; ".join(f"set {i}: {reason}" for i, reason in self.failures)
        super().__init__(f"every authorization set failed ({lines})")


# parallel
class InvalidChunkLen(UsageError):
    pass


class InvalidInput(UsageError):
    pass


class MissingChunk(ExtractionError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"missing chunks: {self.missing}")


class DuplicateChunk(ExtractionError):
    def __init__(self, duplicates):
        self.duplicates = sorted(duplicates)
        super().__init__(f"duplicate chunks: {self.duplicates}")


class VerificationFailed(ExtractionError):
    pass
