"""Desk-scale distributed RL stack: track geometry, a deterministic racing
simulator, from-scratch PPO, a decoupled rollout fabric, and a robust
evaluation harness for checkpoint selection."""

__version__ = "0.1.0"

from dracer.errors import (
    CheckpointError,
    ConfigError,
    DracerError,
    ProtocolError,
    SimulationError,
    TrackGeometryError,
)

__all__ = [
    "DracerError",
    "TrackGeometryError",
    "SimulationError",
    "CheckpointError",
    "ProtocolError",
    "ConfigError",
]
