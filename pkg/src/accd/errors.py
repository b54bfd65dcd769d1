"""Exception hierarchy shared across the toolkit."""


class AccdError(Exception):
    """Base class for all toolkit errors."""


class ParseError(AccdError):
    """A row in an input file could not be parsed."""

    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class InvalidWindow(AccdError):
    pass


class EmptyInput(AccdError):
    pass


class StoreError(AccdError):
    pass


class CorruptSnapshot(StoreError):
    pass


class SeriesTooShort(AccdError):
    def __init__(self, needed: int, got: int):
        super().__init__(f"series needs at least {needed} values, got {got}")
        self.needed = needed
        self.got = got


class NotEnoughPoints(AccdError):
    pass


class LibraryTooSmall(AccdError):
    pass


class LengthMismatch(AccdError):
    pass


class InvalidK(AccdError):
    pass


class InsufficientData(AccdError):
    pass


class ZeroStderr(AccdError):
    pass


class DegenerateArm(AccdError):
    pass


class SubsetDegenerate(AccdError):
    pass


class AllEstimatorsFailed(AccdError):
    pass


class NotFound(AccdError):
    pass


class ChecksumError(AccdError):
    pass
