class LabError(ValueError):
    """Base class of every domain error raised by the lab"""


class PotentialError(LabError):
    pass


class GridTooCoarseError(LabError):
    pass


class DenseCapExceededError(LabError):
    pass


class ResolutionError(LabError):
    pass


class EigensolverError(LabError):
    pass


class SpectralTruncationError(LabError):
    pass


class QuadratureError(LabError):
    pass


class ConsistencyError(LabError):
    """An internal sanity assertion on computed values failed"""


class EnsembleError(LabError):
    pass


class ParameterRangeError(LabError):
    pass


class OnDiagonalError(LabError):
    pass


class ConfigurationError(LabError):
    pass
