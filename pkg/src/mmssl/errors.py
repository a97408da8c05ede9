"""Exception types raised across the package."""


class MmsslError(Exception):
    """Base class for all package errors."""


class InvalidConfig(MmsslError, ValueError):
    pass


class ShapeMismatch(MmsslError, ValueError):
    pass


class ConstantVolume(MmsslError, ValueError):
    pass


class DegenerateHistogram(MmsslError, ValueError):
    pass


class TooFewSubjects(MmsslError, ValueError):
    pass


class InvalidRange(MmsslError, ValueError):
    pass


class NonPositiveScale(MmsslError, ValueError):
    pass


class TooFewControlPoints(MmsslError, ValueError):
    pass


class DimMismatch(MmsslError, ValueError):
    pass


class EmptyBatch(MmsslError, ValueError):
    pass


class LabelOutOfRange(MmsslError, ValueError):
    pass


class UnknownRegime(MmsslError, ValueError):
    pass


class NonFiniteLoss(MmsslError, RuntimeError):
    pass


class FrozenViolation(MmsslError, RuntimeError):
    pass


class SingleClass(MmsslError, ValueError):
    pass


class MissingProbe(MmsslError, KeyError):
    pass


class EmptyResult(MmsslError, ValueError):
    pass
