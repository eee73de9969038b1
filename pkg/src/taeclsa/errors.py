"""Exception hierarchy shared by every module.

Each error carries an ``exit_code`` used by the command-line driver:
1 usage, 2 data/IO, 3 numeric/dimension.
"""


class TaeClsaError(Exception):
    exit_code = 2


class UsageError(TaeClsaError):
    exit_code = 1


class ConfigError(TaeClsaError):
    exit_code = 1


# numeric / shape problems
class NumericError(TaeClsaError):
    exit_code = 3


class DimensionError(NumericError, ValueError):
    pass


class SequenceTooShortError(NumericError, ValueError):
    pass


class EmptySequenceError(SequenceTooShortError):
    pass


class DegenerateBatchError(NumericError, ValueError):
    pass


class InvalidRateError(NumericError, ValueError):
    pass


class LabelError(NumericError, ValueError):
    pass


class TapeEmptyError(NumericError, RuntimeError):
    pass


class NotReadyError(NumericError, RuntimeError):
    pass


class InvalidWindowError(UsageError, ValueError):
    pass


# data / io problems
class DataError(TaeClsaError, ValueError):
    pass


class VocabularyError(DataError, KeyError):
    def __str__(self):
        # KeyError quotes its message; keep it readable
        return Exception.__str__(self)


class IngestionError(DataError):
    pass


class DegenerateClassError(DataError):
    pass


class TooFewRecordsError(DataError):
    pass


class StoreError(TaeClsaError, OSError):
    pass


class BadMagicError(StoreError):
    pass


class VersionError(StoreError):
    pass


class TruncatedError(VersionError):
    pass


class ChecksumError(StoreError):
    pass
