"""Exception hierarchy shared across the package."""


class DracerError(Exception):
    """Base class for all domain errors raised by this package."""


class TrackGeometryError(DracerError):
    """Malformed track mesh or an impossible geometric construction."""


class SimulationError(DracerError):
    """Episode lifecycle contract violation (e.g. stepping a finished episode)."""


class CheckpointError(DracerError):
    """Corrupt, truncated, or incompatible checkpoint data."""


class ProtocolError(DracerError):
    """Wire protocol violation or an unrecoverable store interaction."""


class StoreError(DracerError):
    """Experience-store rejection: gaps, duplicates, or malformed episodes."""


class ConfigError(DracerError):
    """Invalid configuration file or option combination."""
