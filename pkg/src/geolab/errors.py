"""Exception hierarchy.

Each exception carries a short ``code`` string so that the CLI and the
persisted reports can refer to failures without parsing messages.
"""


class GeolabError(Exception):
    code = "ERROR"


class PreconditionViolation(GeolabError):
    code = "PRE_VIOLATION"


class OdeDivergence(GeolabError):
    code = "ODE_DIVERGENCE"


class GridMismatch(GeolabError):
    code = "GRID_MISMATCH"


class RadiusTooLarge(GeolabError):
    code = "RADIUS_TOO_LARGE"


class InconsistentPeriods(GeolabError):
    code = "INCONSISTENT_PERIODS"


class NotMultiple(GeolabError):
    code = "NOT_MULTIPLE"


class SegmentTooLong(GeolabError):
    code = "SEGMENT_TOO_LONG"


class NewtonStall(GeolabError):
    code = "NEWTON_STALL"


class NonIsolatedSuspected(GeolabError):
    code = "NONISOLATED_SUSPECTED"


class NotCritical(GeolabError):
    code = "NOT_CRITICAL"


class VerticesTooFar(GeolabError):
    code = "VERTICES_TOO_FAR"


class PeriodMismatch(GeolabError):
    code = "PERIOD_MISMATCH"


class IndexTooSmall(GeolabError):
    code = "INDEX_TOO_SMALL"


class NoConvergence(GeolabError):
    code = "NO_CONVERGENCE"


class ConfigError(GeolabError):
    code = "CONFIG_ERROR"
