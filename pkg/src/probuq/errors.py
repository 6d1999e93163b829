"""Exception and warning types raised across the package."""


class ProbUQError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ProbUQError, ValueError):
    pass


class NonSquare(DimensionMismatch):
    pass


class NonSymmetric(ProbUQError, ValueError):
    pass


class NumericalError(ProbUQError, ArithmeticError):
    """Base class for numerical failures (mapped to a dedicated CLI exit code)."""


class NotPositiveDefinite(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    def __init__(self, iteration, value):
        super().__init__(f"objective is not finite at iteration {iteration}: {value!r}")
        self.iteration = iteration
        self.value = value


class NonFiniteTarget(NumericalError):
    pass


class ZeroDensityAtSample(NumericalError):
    def __init__(self, index):
        super().__init__(f"importance density is zero at sample {index}")
        self.index = index


class NoFailureFound(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NonPositiveSigma(ProbUQError, ValueError):
    pass


class OutOfSupport(ProbUQError, ValueError):
    pass


class EmptyPosterior(ProbUQError, ValueError):
    pass


class EmptyBasis(ProbUQError, ValueError):
    pass


class EmptyVector(ProbUQError, ValueError):
    pass


class InsufficientCandidates(ProbUQError, ValueError):
    pass


class InsufficientChains(ProbUQError, ValueError):
    pass


class SizeMismatch(DimensionMismatch):
    pass


class SurrogateFileError(ProbUQError, IOError):
    pass


class VersionMismatch(SurrogateFileError):
    pass


class CorruptFile(SurrogateFileError):
    pass


class ModelEvaluationError(ProbUQError, RuntimeError):
    """Raised when model failures exceed what the caller's policy tolerates."""


class ConfigError(ProbUQError, ValueError):
    pass


# warnings


class DegenerateSigmaWarning(RuntimeWarning):
    pass


class StagnantChainsWarning(RuntimeWarning):
    pass


class DegenerateEnsembleWarning(RuntimeWarning):
    pass


class NegativeVarianceWarning(RuntimeWarning):
    pass
