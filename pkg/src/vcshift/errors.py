"""Exception hierarchy. Each family maps to one CLI exit code."""


class VCError(Exception):
    exit_code = 1


class ConfigError(VCError, ValueError):
    exit_code = 2


class DataError(VCError, ValueError):
    exit_code = 3


class WavNotFoundError(DataError, FileNotFoundError):
    pass


class MalformedWavError(DataError):
    pass


class UnsupportedEncodingError(DataError):
    pass


class TooShortError(DataError):
    pass


class AlignmentError(DataError):
    pass


class UnknownSpeakerError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ManifestError(DataError):
    pass


class NumericError(VCError, ArithmeticError):
    exit_code = 4


class CheckpointError(VCError):
    exit_code = 5


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class FingerprintMismatchError(CheckpointError):
    pass
