"""Exception types shared across the registration toolkit."""


class MedpnetError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(MedpnetError):
    """Operand shapes are incompatible; message carries both shapes."""


class SizeMismatch(MedpnetError):
    """Paired point clouds differ in size."""


class DegenerateConfiguration(MedpnetError):
    """Point configuration has too little rank for a unique rigid fit."""


class LogNearBranchCut(MedpnetError):
    """Rotation angle too close to pi for a stable logarithm."""


class EmptySurface(MedpnetError):
    """Shape specification produced no surface to sample."""


class OverlapInfeasible(MedpnetError):
    """Crop settings cannot satisfy the requested overlap ratio."""


class ParseError(MedpnetError):
    """Malformed cloud or manifest file.

    Attributes
    ----------
    line : int or None
        1-based line number where parsing failed, when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingFile(MedpnetError, FileNotFoundError):
    """A referenced file does not exist."""


class TooFewPoints(MedpnetError):
    """Cloud too small for the requested neighborhood size."""


class BackwardBeforeForward(MedpnetError):
    """Optimizer step requested before any backward pass populated gradients."""


class EmptyDataset(MedpnetError):
    """Training requested on an empty pair manifest."""


class TooFewSamples(MedpnetError):
    """Fusion training needs more calibration samples."""


class NoCorrespondences(MedpnetError):
    """Every candidate correspondence was rejected."""


class NoValidCells(MedpnetError):
    """No voxel accumulated enough points for Gaussian statistics."""


class AllPointsOutsideGrid(MedpnetError):
    """No transformed point falls inside any populated grid cell."""


class TimeBudgetExceeded(MedpnetError):
    """Registration ran past the configured wall-clock budget."""


class RegistrationChannelError(MedpnetError):
    """Failure inside one fusion channel, tagged with the channel name."""

    def __init__(self, channel, cause):
        super().__init__(f"{channel} channel failed: {cause}")
        self.channel = channel
        self.cause = cause


class GimbalLockWarning(UserWarning):
    """Pitch near +/-90 degrees; Euler residuals are ill-conditioned."""
