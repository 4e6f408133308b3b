"""Exception hierarchy shared by all anofel modules."""

from __future__ import annotations


class AnofelError(Exception):
    """Base class for every error raised by this package."""


class InvalidSalt(AnofelError, ValueError):
    pass


class DecodeError(AnofelError, ValueError):
    """A key, signature or wire record could not be parsed."""


class EmptySet(AnofelError, ValueError):
    pass


class BadIndex(AnofelError, IndexError):
    pass


class BadThreshold(AnofelError, ValueError):
    pass


class PlaintextRange(AnofelError, ValueError):
    pass


class KeyMismatch(AnofelError, ValueError):
    pass


class CombineFailure(AnofelError):
    pass


class InsufficientShares(AnofelError):
    pass


class DuplicateShare(AnofelError):
    pass


class UnsatisfiedRelation(AnofelError):
    pass


class BadBackend(AnofelError):
    pass


class BadParams(AnofelError, ValueError):
    pass


class EncodeOverflow(AnofelError, OverflowError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


class CorruptAggregate(AnofelError):
    pass


class ShapeError(AnofelError, ValueError):
    pass


class EmptyRound(AnofelError):
    pass


class NoSuchState(AnofelError, LookupError):
    pass


class NoSuchRound(AnofelError, LookupError):
    pass


class Rejected(AnofelError):
    """The board refused an entry; ``reason`` is a short machine-readable code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class DuplicateCommitment(Rejected):
    def __init__(self, detail: str = ""):
        super().__init__("DuplicateCommitment", detail)


class DuplicateTag(Rejected):
    def __init__(self, detail: str = ""):
        super().__init__("DuplicateTag", detail)


class ProtocolError(AnofelError):
    pass


class InvalidGame(AnofelError):
    pass


class ConfigError(AnofelError, ValueError):
    pass
