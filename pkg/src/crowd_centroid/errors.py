"""Exception hierarchy shared across the toolkit."""


class CrowdCentroidError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(CrowdCentroidError):
    """Operands have incompatible dimensions."""


class AbsoluteContinuityViolation(CrowdCentroidError):
    """KLD(p‖q) requested where q assigns zero mass to a point p supports."""


class BoundaryDistribution(CrowdCentroidError):
    """A distribution sits on the simplex boundary where an interior point is required."""


class ParseError(CrowdCentroidError):
    """Malformed input file (encoding, header, row arity)."""


class DuplicateAnnotation(CrowdCentroidError):
    """The same (item, annotator) pair appears more than once."""


class UnknownLabel(CrowdCentroidError):
    """A label not present in the explicit label space."""


class EmptyInput(CrowdCentroidError):
    """No data where at least one record/item is required."""


class NoAnnotations(CrowdCentroidError):
    """An item has zero annotations where a positive count is required."""


class TieError(CrowdCentroidError):
    """Majority vote tie under tie_rule='error'."""


class DegenerateInput(CrowdCentroidError):
    """Annotation structure drives all likelihoods to zero even after smoothing."""


class LabelSpaceMismatch(CrowdCentroidError):
    """Model and data disagree on the label space."""


class ConfigError(CrowdCentroidError):
    """Invalid configuration values."""


class NonFiniteLoss(CrowdCentroidError):
    """Training loss became NaN or infinite."""


class LengthMismatch(CrowdCentroidError):
    """Paired sequences differ in length."""


class ConstantSeries(CrowdCentroidError):
    """Correlation of a zero-variance series is undefined."""
