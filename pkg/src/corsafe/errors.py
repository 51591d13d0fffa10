"""Exception types shared across the package."""


class CorsafeError(Exception):
    pass


class PointOutsidePolytope(CorsafeError):
    pass


class UnboundedPolytope(CorsafeError):
    pass


class InvalidSeed(CorsafeError):
    pass


class PoseInObstacle(CorsafeError):
    pass


class TimeOutOfRange(CorsafeError):
    pass


class SingularConversion(CorsafeError):
    pass


class TrajectoryExpired(CorsafeError):
    pass


class LeftCorridor(CorsafeError):
    pass


class NoFreeSpace(CorsafeError):
    pass


class EmptyAfterBinning(CorsafeError):
    pass


class ConfigError(CorsafeError):
    """Bad user-supplied configuration (CLI exit code 2)."""
