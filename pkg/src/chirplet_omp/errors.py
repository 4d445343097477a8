"""Exception and warning types raised across the package."""


class ChirpletError(ValueError):
    """Base class for invalid inputs to the simulation/mitigation routines."""


class DegenerateSlope(UserWarning):
    """Interferer slope equals the radar slope; baseband interference is a pure tone."""


class SlopeTooSmall(ChirpletError):
    pass


class EmptyWindow(ChirpletError):
    pass


class InvalidRange(ChirpletError):
    pass


class EmptySupport(ChirpletError):
    pass


class RankDeficient(ChirpletError):
    """Selected columns no longer have full column rank."""


class InvalidCutoff(ChirpletError):
    pass


class LengthMismatch(ChirpletError):
    pass


class ConfigError(ChirpletError):
    """Malformed configuration file or field."""


class SignalFileError(ChirpletError):
    """Unreadable or malformed signal / cache file."""
