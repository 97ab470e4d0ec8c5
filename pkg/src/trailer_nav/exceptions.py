"""Exception hierarchy shared by all trailer_nav modules."""


class TrailerNavError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(TrailerNavError, ValueError):
    pass


class DegeneratePolygon(GeometryError):
    pass


class NonConvex(GeometryError):
    pass


class InvalidPenalty(GeometryError):
    pass


class EmptyCloud(TrailerNavError, ValueError):
    pass


class SteeringSingularity(TrailerNavError, ValueError):
    pass


class EncoderError(TrailerNavError):
    pass


class DimensionMismatch(EncoderError, ValueError):
    pass


class CorruptWeights(EncoderError, ValueError):
    pass


class PolygonMismatch(EncoderError, ValueError):
    pass


class SolverFailure(EncoderError, RuntimeError):
    pass


class NonFiniteLoss(EncoderError, FloatingPointError):
    pass


class DegenerateWeights(TrailerNavError, FloatingPointError):
    pass


class ConfigError(TrailerNavError, ValueError):
    pass


class EncoderMissing(TrailerNavError, FileNotFoundError):
    pass
