"""
Typed errors for the codec.

Every error carries the process exit code the management commands use when
the error escapes to the command line:

    2  usage (bad arguments, bad indices, mismatched shapes, missing inputs)
    3  format / validation (malformed streams, model mismatch, bad alphabet)
    4  numeric failure (non-finite loss, diverged training)
"""


class ManypriorsError(Exception):
    exit_code = 1


class UsageError(ManypriorsError):
    exit_code = 2


class MissingInputError(UsageError):
    pass


class FormatError(ManypriorsError):
    exit_code = 3


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedStreamError(FormatError):
    pass


class CorruptStreamError(FormatError):
    pass


class ModelMismatchError(FormatError):
    pass


class ImageFormatError(FormatError):
    pass


class AlphabetError(FormatError):
    """A symbol falls outside the alphabet of the frozen tables."""

    def __init__(self, message: str, position: tuple[int, int, int] | None = None):
        super().__init__(message)
        self.position = position


class NumericError(ManypriorsError):
    exit_code = 4


class NonFiniteLossError(NumericError):
    def __init__(self, message: str, prior: int, channel: int):
        super().__init__(message)
        self.prior = prior
        self.channel = channel


class TrainingDivergedError(NumericError):
    pass
