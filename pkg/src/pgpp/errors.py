"""Exception hierarchy shared across the package."""


class PgppError(Exception):
    """Base class for all package errors."""


class ConfigError(PgppError, ValueError):
    pass


# -- topology -----------------------------------------------------------------

class TopologyParseError(PgppError, ValueError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class TopologyTooSmallError(PgppError, ValueError):
    pass


class DegenerateGeometryError(PgppError, ValueError):
    pass


class InvalidKError(PgppError, ValueError):
    pass


class OutOfRegionError(PgppError, ValueError):
    def __init__(self, message: str, ue_id=None, tick=None):
        super().__init__(message)
        self.ue_id = ue_id
        self.tick = tick


# -- simulation / metrics -----------------------------------------------------

class UnknownTrackingAreaError(PgppError, KeyError):
    pass


class SimulationError(PgppError, ValueError):
    pass


class AnonymityDomainError(PgppError, ValueError):
    pass


# -- tokens / gateway -----------------------------------------------------------

class TokenError(PgppError, ValueError):
    pass


class StoreUnavailableError(PgppError):
    """The spent-token store could not be reached; callers must not accept."""


class WireFormatError(PgppError, ValueError):
    pass


# -- aka ----------------------------------------------------------------------

class AuthRejectError(PgppError):
    """AUTN MAC did not verify: the vector was produced under a different K."""
