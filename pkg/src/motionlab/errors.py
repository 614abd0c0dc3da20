"""Exception hierarchy. Every domain failure raises a MotionLabError subclass
so the CLI can map them to exit code 1 (usage errors exit 2 via argparse).
"""


class MotionLabError(Exception):
    """Base class for all domain errors raised by this package."""


class LimitViolationError(MotionLabError):
    """A pose or action violates joint limits where limits are a precondition."""


class NumericError(MotionLabError):
    """Non-finite value fed to or produced by a numeric routine."""


class FormatError(MotionLabError):
    """Malformed, truncated, or version-mismatched file content."""


class DimensionError(MotionLabError):
    """Array dimensionality inconsistent with the declared schema."""


class TrainingDivergedError(MotionLabError):
    """NaN/Inf appeared in the loss or weights during a training run."""
