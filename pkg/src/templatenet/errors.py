"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from ``TemplateNetError``.
The three intermediate classes map onto CLI exit codes (config = 1,
data = 2, numerical = 3).
"""


class TemplateNetError(Exception):
    exit_code = 2


class ConfigError(TemplateNetError, ValueError):
    exit_code = 1


class DataError(TemplateNetError, ValueError):
    exit_code = 2


class NumericalError(TemplateNetError, ArithmeticError):
    exit_code = 3


# io
class DataMissing(DataError):
    pass


# signal_core
class ConstantSignal(DataError):
    pass


class TooShort(DataError):
    pass


class InvalidRate(DataError):
    pass


class NoCompleteEpoch(DataError):
    pass


# synth
class PlacementOverflow(DataError):
    pass


# edf
class Malformed(DataError):
    pass


class UnsupportedVariant(DataError):
    pass


class InconsistentLengths(DataError):
    pass


class UnknownToken(DataError):
    pass


class TooFewSubjects(DataError):
    pass


# nn
class ShapeMismatch(DataError):
    pass


class ZeroFilter(DataError):
    pass


class NonFinite(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class InvalidEpsilon(ConfigError):
    pass


class InvalidConfig(ConfigError):
    pass


# pretrain / interpret
class WaveformTooLong(DataError):
    pass


class InsufficientLength(DataError):
    pass


class DegenerateSaliency(NumericalError):
    pass
