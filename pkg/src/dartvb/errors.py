"""Exception hierarchy shared by every stage of the pipeline."""


class DartError(Exception):
    """Base class for all errors raised by dartvb."""


# panel
class MalformedFile(DartError):
    pass


class MissingColumn(DartError):
    pass


class InvariantViolation(DartError):
    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows or [])


class DegenerateSeries(DartError):
    pass


class InsufficientOverlap(DartError):
    pass


class EmptySeries(DartError):
    pass


# features
class InsufficientHistory(DartError):
    pass


class UnknownZone(DartError):
    pass


# classifier
class DimensionMismatch(DartError):
    pass


class SingleClassData(DartError):
    pass


class NonFinite(DartError):
    pass


class EmptyGrid(DartError):
    pass


class SplitOverlap(DartError):
    pass


# bidstack
class NoCrossing(DartError):
    pass


class EmptyBucket(DartError):
    pass


class ZeroLoad(DartError):
    pass


class MissingReference(DartError):
    pass


class DegenerateRegressor(DartError):
    pass


# sizing
class MissingCoefficient(DartError):
    pass


class NoFiredSignals(DartError):
    pass


# backtest
class MissingCalibration(DartError):
    pass


class EmptySupport(DartError):
    pass


class EmptyTrades(DartError):
    pass


class ConfigError(DartError):
    pass
