"""Exception hierarchy.

Everything derived from :class:`InputError` maps to CLI exit code 2 and
everything derived from :class:`StateError` maps to exit code 3.
"""


class SeizureDetError(Exception):
    pass


class InputError(SeizureDetError, ValueError):
    """Malformed or out-of-contract input."""


class StateError(SeizureDetError):
    """Inputs are individually valid but incompatible with stored state."""


# signal_core
class NonPositiveRate(InputError):
    pass


class EmptySignal(InputError):
    pass


class InvalidBand(InputError):
    pass


class SignalShorterThanFilter(InputError):
    pass


class EmptyRanges(InputError):
    pass


class ZeroVariance(InputError):
    pass


# windowing / labels
class OverlappingLabels(InputError):
    pass


class UnsortedLabels(InputError):
    pass


# post-processing
class EmptyPredictions(InputError):
    pass


class MixedRecordings(InputError):
    pass


# scoring
class LengthMismatch(InputError):
    pass


class UnsortedEvents(InputError):
    pass


class OverlapWithinList(InputError):
    pass


# neural
class ShapeMismatch(InputError):
    pass


class OddDimension(InputError):
    pass


class NonFiniteGradient(SeizureDetError, FloatingPointError):
    pass


class SingleClassDataset(InputError):
    pass


class IncompatibleCheckpoint(StateError):
    pass


# datasets
class TooFewSubjects(InputError):
    pass


class MissingSet(InputError):
    pass


class MalformedFile(InputError):
    pass


class SeizuresDoNotFit(InputError):
    pass
