"""Exception hierarchy shared by every qdpo module."""


class QdpoError(Exception):
    """Base class for all library errors."""


# market data
class MissingTicker(QdpoError):
    pass


class NonPositivePrice(QdpoError):
    pass


class CalendarMismatch(QdpoError):
    pass


class InsufficientHistory(QdpoError):
    pass


class WindowTooShort(QdpoError):
    pass


# model
class IndexOutOfRange(QdpoError, IndexError):
    pass


class DegenerateRange(QdpoError):
    pass


class LengthMismatch(QdpoError, ValueError):
    pass


class InfeasibleBounds(QdpoError, ValueError):
    pass


# simulator
class TooManyQubits(QdpoError):
    pass


class ParamLengthMismatch(QdpoError, ValueError):
    pass


class DimensionMismatch(QdpoError, ValueError):
    pass


# optimisation
class NonFiniteObjective(QdpoError):
    pass


# recovery / analytics
class EmptySampleSet(QdpoError, ValueError):
    pass


class ZeroFreeMass(QdpoError):
    pass


class NotNormalized(QdpoError):
    pass


class SolverStall(QdpoError):
    pass


class TooLarge(QdpoError):
    pass
