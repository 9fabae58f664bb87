"""Exception hierarchy shared by every module."""


class DistLRError(Exception):
    """Base class for all errors raised by distlr."""


class SchemaError(DistLRError, ValueError):
    pass


class ParseError(DistLRError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class DuplicateTraceError(DistLRError, ValueError):
    pass


class ModeError(DistLRError, ValueError):
    pass


class NormalizationError(DistLRError, ValueError):
    pass


class SplitError(DistLRError, ValueError):
    pass


class DiagnosticError(DistLRError, ValueError):
    pass


class PairingError(DistLRError, ValueError):
    pass


class DimensionError(DistLRError, ValueError):
    pass


class UndefinedCorrelationError(DistLRError, ValueError):
    pass


class StalePairSetError(DistLRError, ValueError):
    pass


class MemoryBudgetError(DistLRError, MemoryError):
    pass


class FitError(DistLRError, ValueError):
    pass


class DegenerateFitError(FitError):
    pass


class IndeterminateLRError(DistLRError, ArithmeticError):
    pass


class StatTestError(DistLRError, ValueError):
    pass


class CVError(DistLRError, ValueError):
    pass


class EvaluationError(DistLRError, ValueError):
    pass


class LeakageError(EvaluationError):
    pass


class ConfigError(DistLRError, ValueError):
    pass


class ModelParseError(DistLRError, ValueError):
    pass


class ModelVersionError(ModelParseError):
    pass


class ConvergenceWarning(UserWarning):
    pass


class LRUnderflowWarning(RuntimeWarning):
    pass
