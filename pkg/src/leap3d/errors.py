"""Exception types shared across the pipeline."""


class LeapError(Exception):
    """Base class for all errors raised by leap3d."""


class ZeroMassError(LeapError):
    """A probability vector with zero total mass cannot be normalized."""


class DimensionError(LeapError):
    """Array or image dimensions do not match what the operation expects."""


class ParameterError(LeapError):
    """A parameter violates its documented range or constraint."""


class TaxonomyError(LeapError):
    """Invalid class list, prompt map, category map, or merge map."""


class GeometryError(LeapError):
    """Non-finite coordinates, non-rigid transforms, or out-of-range voxel indices."""


class FormatError(LeapError):
    """A file does not conform to its on-disk format."""


class UndefinedMetricError(LeapError):
    """A metric has no defined value (e.g. no class was ever observed)."""
