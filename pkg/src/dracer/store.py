"""In-memory experience and checkpoint stores.

The experience store is the intermediary between rollout workers and the
trainer. Workers append whole episodes (possibly in chunks for large
observations); the trainer drains complete episodes at most once each, in
completion order. All operations are serialized under one lock, so each
operation is atomic to every observer.

Memory stays bounded two ways: completed-but-undrained episodes are capped
(appends beyond the cap block until a drain frees space), and partially
appended episodes from silent workers are garbage-collected after a TTL. The
clock is injectable so TTL behavior is testable without real waiting.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from dracer.checkpoint import deserialize_checkpoint
from dracer.errors import CheckpointError, StoreError

__all__ = ["ExperienceRecord", "Episode", "ExperienceStore", "CheckpointStore"]

PENDING_CAP = 200
PARTIAL_TTL_S = 60.0


@dataclass(frozen=True)
class ExperienceRecord:
    """One transition, as collected by a worker.

    ``action`` is the clean sampled index and ``logp_old`` its log-prob under
    the behavior policy; any execution noise is not visible here.
    """

    episode_id: int
    step_index: int
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    logp_old: float
    value_old: float
    policy_version: int
    worker_id: int


@dataclass
class Episode:
    episode_id: int
    worker_id: int
    policy_version: int
    records: list
    progress: float = 0.0  # final progress fraction reported by the worker

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def total_reward(self) -> float:
        return float(sum(r.reward for r in self.records))

    @property
    def mean_step_reward(self) -> float:
        return self.total_reward / max(self.steps, 1)

    def key(self):
        return (self.worker_id, self.episode_id)


def _validate_chunk(records: list, expected_next: int):
    """Within-chunk contiguity and done placement; returns next expected index."""
    if not records:
        raise StoreError("empty record chunk")
    for i, rec in enumerate(records):
        want = expected_next + i
        if rec.step_index != want:
            raise StoreError(
                f"step_index gap: expected {want}, got {rec.step_index}"
            )
        if rec.done and i != len(records) - 1:
            raise StoreError("done flag set before the final record")
    return expected_next + len(records)


@dataclass
class _Partial:
    records: list = field(default_factory=list)
    last_touch: float = 0.0
    progress: float = 0.0


class ExperienceStore:
    """Thread-safe episode sink with at-most-once draining."""

    def __init__(self, pending_cap: int = PENDING_CAP, partial_ttl: float = PARTIAL_TTL_S,
                 clock=time.monotonic):
        self._cond = threading.Condition()
        self._pending = []  # complete episodes, completion order
        self._partials = {}  # key -> _Partial
        self._completed_keys = set()
        self._clock = clock
        self._pending_cap = pending_cap
        self._partial_ttl = partial_ttl
        self.total_episodes = 0
        self.total_steps = 0

    # -- internal, caller holds the lock --------------------------------

    def _gc_partials(self):
        now = self._clock()
        stale = [k for k, p in self._partials.items()
                 if now - p.last_touch > self._partial_ttl]
        for k in stale:
            del self._partials[k]

    # -- appends ----------------------------------------------------------

    def append_chunk(self, episode_id: int, worker_id: int, records: list,
                     *, progress: float = 0.0) -> dict:
        """Add records for one episode; the chunk whose last record carries
        ``done`` completes the episode and makes it drainable.

        Returns the store counters. Raises StoreError on gaps, duplicates, or
        misplaced done flags; a rejected episode's partial state is discarded.
        """
        key = (worker_id, episode_id)
        with self._cond:
            self._gc_partials()
            if key in self._completed_keys:
                raise StoreError(
                    f"duplicate episode {episode_id} from worker {worker_id}"
                )
            partial = self._partials.get(key)
            expected = len(partial.records) if partial else 0
            try:
                _validate_chunk(records, expected)
            except StoreError:
                self._partials.pop(key, None)
                raise
            if partial is None:
                partial = self._partials[key] = _Partial()
            partial.records.extend(records)
            partial.last_touch = self._clock()
            partial.progress = progress
            if records[-1].done:
                del self._partials[key]
                episode = Episode(
                    episode_id=episode_id,
                    worker_id=worker_id,
                    policy_version=partial.records[0].policy_version,
                    records=partial.records,
                    progress=partial.progress,
                )
                while len(self._pending) >= self._pending_cap:
                    self._cond.wait(0.05)
                self._completed_keys.add(key)
                self._pending.append(episode)
                self.total_episodes += 1
                self.total_steps += episode.steps
                self._cond.notify_all()
            return self.counters()

    def append_episode(self, episode: Episode) -> dict:
        if not episode.records or not episode.records[-1].done:
            raise StoreError("append_episode requires a complete episode ending in done")
        return self.append_chunk(episode.episode_id, episode.worker_id,
                                 episode.records, progress=episode.progress)

    # -- drains -----------------------------------------------------------

    def drain(self, min_episodes: int, *, block: bool = False, timeout: float = None):
        """Take every pending episode once at least ``min_episodes`` are ready.

        Non-blocking calls return None when not ready. Episodes are returned
        in completion order and never re-delivered.
        """
        if min_episodes < 1:
            raise ValueError("min_episodes must be >= 1")
        deadline = None if timeout is None else self._clock() + timeout
        with self._cond:
            while True:
                self._gc_partials()
                if len(self._pending) >= min_episodes:
                    taken = self._pending
                    self._pending = []
                    self._cond.notify_all()
                    return taken
                if not block:
                    return None
                if deadline is not None and self._clock() >= deadline:
                    return None
                self._cond.wait(0.05)

    def counters(self) -> dict:
        return {
            "episodes": self.total_episodes,
            "steps": self.total_steps,
            "pending": len(self._pending),
            "partials": len(self._partials),
        }


class CheckpointStore:
    """Versioned, immutable checkpoint snapshots with latest-wins fetch."""

    HISTORY = 4  # older versions are discarded; fetch serves only the latest

    def __init__(self):
        self._lock = threading.Lock()
        self._history = []  # list of (version, bytes)
        self._latest_version = 0

    def publish(self, data: bytes) -> int:
        ckpt = deserialize_checkpoint(data)  # validates magic + CRC
        with self._lock:
            version = self._latest_version + 1
            if ckpt.version != version:
                raise CheckpointError(
                    f"published checkpoint carries version {ckpt.version}, "
                    f"store assigns {version}"
                )
            self._history.append((version, bytes(data)))
            del self._history[:-self.HISTORY]
            self._latest_version = version
            return version

    def fetch_latest(self):
        """Return (version, bytes) of the newest checkpoint, or None if empty."""
        with self._lock:
            if not self._history:
                return None
            return self._history[-1]

    @property
    def latest_version(self) -> int:
        with self._lock:
            return self._latest_version
