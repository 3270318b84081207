"""Exception hierarchy shared across the framework."""


class LaminarError(Exception):
    """Base class for every error raised by laminar."""


# tensor core
class ShapeMismatch(LaminarError, ValueError):
    pass


class DomainError(LaminarError, ValueError):
    pass


class EmptyReduction(LaminarError, ValueError):
    pass


class NotScalar(LaminarError, ValueError):
    pass


class NoTape(LaminarError, RuntimeError):
    pass


class BatchTooSmall(LaminarError, ValueError):
    pass


# dispatch
class UnknownType(LaminarError, KeyError):
    pass


class NoMatch(LaminarError, LookupError):
    pass


# transforms / data
class EmptySetupSample(LaminarError, ValueError):
    pass


class TransformError(LaminarError):
    """Wraps an exception raised inside a transform, naming the transform."""

    def __init__(self, transform_name, cause, index=None):
        self.transform_name = transform_name
        self.cause = cause
        self.index = index
        where = f" (item {index})" if index is not None else ""
        super().__init__(f"{transform_name}{where}: {type(cause).__name__}: {cause}")


class IndexOutOfRange(LaminarError, IndexError):
    pass


class CollateError(LaminarError, ValueError):
    pass


class EmptySource(LaminarError, ValueError):
    pass


class UnknownDataset(LaminarError, KeyError):
    pass


class ChecksumMismatch(LaminarError):
    pass


class NetworkError(LaminarError, OSError):
    pass


class EmptyItems(LaminarError, ValueError):
    pass


class EmptyTrainSplit(LaminarError, ValueError):
    pass


class GetterError(LaminarError):
    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"getter failed on item {index}: {type(cause).__name__}: {cause}")


class LabelNotFound(LaminarError, KeyError):
    pass


# optimizer
class MissingGrad(LaminarError, RuntimeError):
    pass


class LengthMismatch(LaminarError, ValueError):
    pass


# learner / export
class VersionMismatch(LaminarError):
    pass


class ArchiveError(LaminarError):
    pass


class AllDiverged(LaminarError, RuntimeError):
    pass


# metrics
class FlattenMismatch(LaminarError, ValueError):
    pass


class ConfigError(LaminarError, ValueError):
    pass
