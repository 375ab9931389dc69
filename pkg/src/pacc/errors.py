"""Exception types raised across the toolkit.

Input problems derive from :class:`PaccInputError` (CLI exit code 2); numeric
failures during training derive from :class:`PaccRuntimeError` (exit code 3).
"""


class PaccError(Exception):
    exit_code = 3


class PaccInputError(PaccError, ValueError):
    exit_code = 2


class PaccRuntimeError(PaccError, RuntimeError):
    exit_code = 3


# capture reading
class BadMagic(PaccInputError):
    pass


class Truncated(PaccInputError):
    pass


class UnsupportedLinkType(PaccInputError):
    pass


class NoNetworkLayer(PaccInputError):
    pass


# views
class UnknownField(PaccInputError):
    pass


class NoEnabledLayers(PaccInputError):
    pass


class EmptyDataset(PaccInputError):
    pass


class FormatVersionMismatch(PaccInputError):
    pass


class UnlabeledFlow(PaccInputError):
    pass


# estimators
class EmptyDistribution(PaccInputError):
    pass


class DegenerateRank(PaccInputError):
    pass


class DegenerateRankWarning(UserWarning):
    pass


class SparseBinningWarning(UserWarning):
    pass


class SingleClass(PaccInputError):
    pass


# tensors and model
class ShapeMismatch(PaccInputError):
    pass


class NonPositiveTemperature(PaccInputError):
    pass


class NonScalarObjective(PaccInputError):
    pass


class AllRowsDegenerate(PaccRuntimeError):
    pass


class BatchTooSmall(PaccInputError):
    pass


class LabelOutOfRange(PaccInputError):
    pass


class EmptyClass(PaccInputError):
    pass


# training / evaluation
class ClassTooSmall(PaccInputError):
    pass


class NonFiniteLoss(PaccRuntimeError):
    def __init__(self, message, batch_id=None, dump=None):
        super().__init__(message)
        self.batch_id = batch_id
        self.dump = dump or {}


class DimMismatch(PaccInputError):
    pass


class EmptySplit(PaccInputError):
    pass


class ConfigError(PaccInputError):
    pass
