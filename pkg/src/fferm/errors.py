"""Exception types raised across the package."""


class FfermError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveArgument(FfermError):
    """The generator f was evaluated at a point outside its domain."""


class InvalidAlphaParam(FfermError):
    """alpha-family parameter must not be 0 or 1 (those are the KL limits)."""


class OutOfDualDomain(FfermError):
    """A dual variable lies outside the conjugate's domain."""


class NonDifferentiable(FfermError):
    """Derivative requested for a non-differentiable divergence (total variation)."""


class LengthMismatch(FfermError):
    pass


class AbsoluteContinuityViolation(FfermError):
    """p puts mass where q has none, for a divergence that is infinite there."""


class DimensionMismatch(FfermError):
    pass


class ClassIndexOutOfRange(FfermError):
    pass


class EmptyBatch(FfermError):
    pass


class EmptyGroup(FfermError):
    """A sensitive group has no members (violates the positivity assumption)."""

    def __init__(self, group: int, message: str | None = None):
        self.group = group
        super().__init__(message or f"group {group} has no members")


class EmptyConditionedSubset(FfermError):
    """Conditioning on a label value left a group with no samples."""


class NonFiniteUpdate(FfermError):
    """A parameter became NaN/inf during training; step sizes are likely off."""


class NonBinaryGroup(FfermError):
    pass


class UnsatisfiableSplit(FfermError):
    pass


class MissingColumn(FfermError):
    pass


class NonNumericFeature(FfermError):
    pass


class UnsupportedDivergenceForLinf(FfermError):
    """The closed-form worst case under sup-norm shifts needs KL or chi-squared."""


class ConfigError(FfermError):
    """Invalid run configuration (CLI exit code 2)."""


class TargetUnreachable(FfermError):
    """Accuracy-matching search failed within its iteration budget (CLI exit code 4)."""
