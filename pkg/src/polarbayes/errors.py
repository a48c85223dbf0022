"""Exception types shared across the package."""


class PolarBayesError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(PolarBayesError):
    pass


class NotSquare(ShapeMismatch):
    pass


class NotPositiveDefinite(PolarBayesError):
    """A matrix required to be SPD has a nonpositive pivot."""


class RankDeficient(PolarBayesError):
    pass


class ZeroMatrix(PolarBayesError):
    pass


class SafetyRegionViolation(PolarBayesError):
    """A landing step left the bounded-infeasibility safety region."""


class TapeMismatch(PolarBayesError):
    pass


class DimensionTooLarge(PolarBayesError):
    pass


class NonFiniteLoss(PolarBayesError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class LabelOutOfRange(PolarBayesError):
    pass


class DimMismatch(PolarBayesError):
    pass


class ParseError(PolarBayesError):
    pass


class EmptyDataset(PolarBayesError):
    pass


class CheckpointError(PolarBayesError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionUnsupported(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    pass
