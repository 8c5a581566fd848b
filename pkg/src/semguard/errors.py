"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (1),
bad or missing data (2) and numerical failures (3).
"""


class SemguardError(Exception):
    exit_code = 1


class ConfigError(SemguardError, ValueError):
    exit_code = 1


class DataError(SemguardError, ValueError):
    exit_code = 2


class NumericalError(SemguardError, ArithmeticError):
    exit_code = 3


# data ingest
class WrongMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class CountMismatch(DataError):
    pass


class BaselineTooLarge(ConfigError):
    pass


# poisoning
class OutOfBounds(ConfigError):
    pass


class InsufficientSourceSamples(DataError):
    pass


# model / losses
class DimensionMismatch(DataError):
    pass


class ProbabilityOutOfRange(DataError):
    pass


class SigmaOutOfRange(ConfigError):
    pass


class EmptyDataset(DataError):
    pass


class DivergedLoss(NumericalError):
    pass


# channel
class NonFiniteInput(NumericalError):
    pass


# detector / evaluation
class TooFewSamples(DataError):
    pass


class DegenerateCovariance(NumericalError):
    pass


class EmptyBaseline(DataError):
    pass


class BadPercentile(ConfigError):
    pass


class LengthMismatch(DataError):
    pass


class IoFailure(DataError):
    pass
