"""Exception types shared across the package."""


class IfsError(Exception):
    """Base class for all package errors."""


class ConfigError(IfsError):
    """Malformed system file or inadmissible parameter."""


class NonFinite(IfsError, FloatingPointError):
    pass


class DegenerateField(IfsError):
    """All raw probability values vanish under renormalization."""


class FieldNotNormalized(IfsError):
    """An exact-mode field does not sum to one at the queried point."""


class IndexOutOfRange(IfsError, IndexError):
    pass


class DegenerateBox(IfsError):
    """No admissible point pair exists in the domain box."""


class BudgetExceeded(IfsError):
    pass


class FitDegenerate(IfsError):
    """Too few usable points for a least-squares fit."""


class MissingMeanRef(IfsError):
    pass


class ClipTooLarge(IfsError):
    """Clipped negative eigenvalue mass exceeds the allowed share of the trace."""


class BudgetInfeasible(IfsError):
    """No ramp width satisfies both the mass and the norm constraint."""


class MissingArtifacts(IfsError):
    pass


class SeriesNotDecayingWarning(UserWarning):
    """Autocovariance cutoff hit the lag cap without the series settling."""
