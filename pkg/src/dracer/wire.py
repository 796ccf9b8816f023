"""Framed wire protocol and the store service speaking it.

Frame layout: magic ``DRXP`` (4 bytes), message type (u8), payload length
(u32 big-endian), payload. The payload opens with a u32 big-endian length of
a UTF-8 JSON header, then the header, then raw little-endian binary sections
whose names, dtypes, shapes, and offsets the header declares. Every request
carries a correlation id (``cid``) echoed by all of its responses. Frames
above 64 MiB are rejected on both ends; large episodes travel as multiple
chunk frames instead.

Message types: 0x01 AppendEpisode, 0x02 DrainRequest, 0x03 DrainResponse,
0x04 PublishCheckpoint, 0x05 FetchCheckpointRequest, 0x06
FetchCheckpointResponse, 0x07 Counters request/response, 0x7F Error.
"""

from __future__ import annotations

import itertools
import json
import socket
import struct
import threading

import numpy as np

from dracer.errors import CheckpointError, ProtocolError, StoreError
from dracer.store import CheckpointStore, Episode, ExperienceRecord, ExperienceStore

__all__ = [
    "MAGIC",
    "MAX_FRAME",
    "encode_frame",
    "read_frame",
    "pack_records",
    "unpack_records",
    "episode_chunks",
    "StoreServer",
    "StoreClient",
]

MAGIC = b"DRXP"
MAX_FRAME = 64 * 1024 * 1024
_PREFIX = struct.Struct(">4sBI")

T_APPEND = 0x01
T_DRAIN_REQ = 0x02
T_DRAIN_RESP = 0x03
T_PUBLISH = 0x04
T_FETCH_REQ = 0x05
T_FETCH_RESP = 0x06
T_COUNTERS = 0x07
T_ERROR = 0x7F

_VALID_TYPES = {T_APPEND, T_DRAIN_REQ, T_DRAIN_RESP, T_PUBLISH, T_FETCH_REQ,
                T_FETCH_RESP, T_COUNTERS, T_ERROR}

# Append/drain chunks stay well under the frame cap.
CHUNK_BYTE_BUDGET = 40 * 1024 * 1024


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------


def _wire_dtype(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.itemsize > 1 and arr.dtype.byteorder not in ("<", "|"):
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return np.ascontiguousarray(arr)


def encode_frame(msg_type: int, header: dict, sections=()) -> bytes:
    table = []
    blobs = []
    offset = 0
    for name, arr in sections:
        arr = _wire_dtype(np.asarray(arr))
        raw = arr.tobytes()
        table.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    hdr = dict(header)
    hdr["sections"] = table
    meta = json.dumps(hdr, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = struct.pack(">I", len(meta)) + meta + b"".join(blobs)
    if len(payload) > MAX_FRAME:
        raise ProtocolError(f"frame payload {len(payload)} exceeds {MAX_FRAME} bytes")
    return _PREFIX.pack(MAGIC, msg_type, len(payload)) + payload


def _read_exact(reader, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        part = reader.read(remaining)
        if not part:
            raise EOFError("connection closed mid-frame")
        chunks.append(part)
        remaining -= len(part)
    return b"".join(chunks)


def read_frame(reader):
    """Read one frame; returns (msg_type, header, {name: array})."""
    prefix = _read_exact(reader, _PREFIX.size)
    magic, msg_type, length = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if msg_type not in _VALID_TYPES:
        raise ProtocolError(f"unknown message type 0x{msg_type:02x}")
    if length > MAX_FRAME:
        raise ProtocolError(f"frame payload {length} exceeds {MAX_FRAME} bytes")
    payload = _read_exact(reader, length)
    if len(payload) < 4:
        raise ProtocolError("payload too short for header length")
    (meta_len,) = struct.unpack_from(">I", payload, 0)
    if 4 + meta_len > len(payload):
        raise ProtocolError("JSON header overruns payload")
    try:
        header = json.loads(payload[4 : 4 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"unreadable frame header: {exc}") from exc
    blob = payload[4 + meta_len :]
    sections = {}
    for entry in header.get("sections", []):
        start = int(entry["offset"])
        end = start + int(entry["nbytes"])
        if end > len(blob):
            raise ProtocolError(f"section {entry['name']!r} overruns frame")
        arr = np.frombuffer(blob[start:end], dtype=np.dtype(entry["dtype"]))
        sections[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return msg_type, header, sections


# ---------------------------------------------------------------------------
# Episode <-> columnar sections
# ---------------------------------------------------------------------------


def pack_records(records: list):
    obs = np.stack([r.obs for r in records])
    next_obs = np.stack([r.next_obs for r in records])
    return [
        ("obs", obs),
        ("next_obs", next_obs),
        ("actions", np.array([r.action for r in records], dtype="<i8")),
        ("rewards", np.array([r.reward for r in records], dtype="<f8")),
        ("dones", np.array([r.done for r in records], dtype="|u1")),
        ("logp_old", np.array([r.logp_old for r in records], dtype="<f8")),
        ("value_old", np.array([r.value_old for r in records], dtype="<f8")),
        ("versions", np.array([r.policy_version for r in records], dtype="<i8")),
    ]


def unpack_records(header: dict, sections: dict) -> list:
    required = ("obs", "next_obs", "actions", "rewards", "dones", "logp_old",
                "value_old", "versions")
    missing = [k for k in required if k not in sections]
    if missing:
        raise ProtocolError(f"episode chunk missing sections {missing}")
    episode_id = int(header["episode_id"])
    worker_id = int(header["worker_id"])
    start = int(header["start_index"])
    n = sections["actions"].shape[0]
    for key in required:
        if sections[key].shape[0] != n:
            raise ProtocolError(f"section {key!r} length mismatch")
    out = []
    for i in range(n):
        out.append(ExperienceRecord(
            episode_id=episode_id,
            step_index=start + i,
            obs=sections["obs"][i],
            action=int(sections["actions"][i]),
            reward=float(sections["rewards"][i]),
            next_obs=sections["next_obs"][i],
            done=bool(sections["dones"][i]),
            logp_old=float(sections["logp_old"][i]),
            value_old=float(sections["value_old"][i]),
            policy_version=int(sections["versions"][i]),
            worker_id=worker_id,
        ))
    return out


def episode_chunks(episode: Episode, budget: int = CHUNK_BYTE_BUDGET):
    """Split an episode into (header_fields, records) chunks under the budget."""
    per_record = episode.records[0].obs.nbytes * 2 + 64
    per_chunk = max(1, budget // per_record)
    records = episode.records
    for start in range(0, len(records), per_chunk):
        part = records[start : start + per_chunk]
        fields = {
            "episode_id": episode.episode_id,
            "worker_id": episode.worker_id,
            "start_index": part[0].step_index,
            "progress": episode.progress,
        }
        yield fields, part


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------


class StoreServer:
    """Serves one experience store and one checkpoint store over TCP."""

    def __init__(self, experience: ExperienceStore = None,
                 checkpoints: CheckpointStore = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.experience = experience if experience is not None else ExperienceStore()
        self.checkpoints = checkpoints if checkpoints is not None else CheckpointStore()
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._threads = []
        self._conns = []
        self._conn_lock = threading.Lock()
        self._accept_thread = None

    # -- lifecycle -------------------------------------------------------

    def start(self) -> "StoreServer":
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="store-accept", daemon=True)
        self._accept_thread.start()
        return self

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conn_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                conn.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=5.0)
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5.0)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- connection handling ----------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            with self._conn_lock:
                self._conns.append(conn)
            t = threading.Thread(target=self._serve_conn, args=(conn,),
                                 name="store-conn", daemon=True)
            self._threads.append(t)
            t.start()

    def _serve_conn(self, conn: socket.socket):
        reader = conn.makefile("rb")
        try:
            while not self._stop.is_set():
                try:
                    msg_type, header, sections = read_frame(reader)
                except (EOFError, OSError):
                    return
                cid = header.get("cid", 0)
                try:
                    for frame in self._handle(msg_type, header, sections):
                        conn.sendall(frame)
                except (StoreError, CheckpointError) as exc:
                    kind = "store" if isinstance(exc, StoreError) else "checkpoint"
                    conn.sendall(encode_frame(T_ERROR, {"cid": cid, "kind": kind,
                                                        "error": str(exc)}))
                except ProtocolError as exc:
                    conn.sendall(encode_frame(T_ERROR, {"cid": cid, "kind": "protocol",
                                                        "error": str(exc)}))
                    return
        except OSError:
            return
        finally:
            reader.close()
            try:
                conn.close()
            except OSError:
                pass

    def _counters_header(self, cid) -> dict:
        counters = self.experience.counters()
        counters["cid"] = cid
        counters["version"] = self.checkpoints.latest_version
        return counters

    def _handle(self, msg_type, header, sections):
        cid = header.get("cid", 0)
        if msg_type == T_APPEND:
            records = unpack_records(header, sections)
            self.experience.append_chunk(
                int(header["episode_id"]), int(header["worker_id"]), records,
                progress=float(header.get("progress", 0.0)))
            yield encode_frame(T_COUNTERS, self._counters_header(cid))
        elif msg_type == T_DRAIN_REQ:
            episodes = self.experience.drain(
                int(header["min_episodes"]),
                block=bool(header.get("block", False)),
                timeout=header.get("timeout"))
            if episodes is None:
                yield encode_frame(T_DRAIN_RESP, {"cid": cid, "more": False,
                                                  "ready": False, "count": 0})
                return
            for ep in episodes:
                for fields, part in episode_chunks(ep):
                    hdr = {"cid": cid, "more": True,
                           "last": part[-1] is ep.records[-1],
                           "policy_version": ep.policy_version}
                    hdr.update(fields)
                    yield encode_frame(T_DRAIN_RESP, hdr, pack_records(part))
            yield encode_frame(T_DRAIN_RESP, {"cid": cid, "more": False,
                                              "ready": True, "count": len(episodes)})
        elif msg_type == T_PUBLISH:
            if "checkpoint" not in sections:
                raise ProtocolError("publish frame missing checkpoint section")
            version = self.checkpoints.publish(sections["checkpoint"].tobytes())
            hdr = self._counters_header(cid)
            hdr["version"] = version
            yield encode_frame(T_COUNTERS, hdr)
        elif msg_type == T_FETCH_REQ:
            fetched = self.checkpoints.fetch_latest()
            if fetched is None:
                yield encode_frame(T_FETCH_RESP, {"cid": cid, "empty": True})
            else:
                version, data = fetched
                yield encode_frame(T_FETCH_RESP, {"cid": cid, "empty": False,
                                                  "version": version},
                                   [("checkpoint", np.frombuffer(data, dtype="|u1"))])
        elif msg_type == T_COUNTERS:
            yield encode_frame(T_COUNTERS, self._counters_header(cid))
        else:
            raise ProtocolError(f"unexpected message type 0x{msg_type:02x}")


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


class StoreClient:
    """Blocking client; one request in flight at a time per instance."""

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        self.host = host
        self.port = port
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise ConnectionError(f"store at {host}:{port} unreachable: {exc}") from exc
        self._sock.settimeout(None)
        self._reader = self._sock.makefile("rb")
        self._lock = threading.Lock()
        self._cids = itertools.count(1)

    def close(self):
        try:
            self._reader.close()
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- request plumbing ---------------------------------------------------

    def _roundtrip(self, msg_type, header, sections=()):
        cid = next(self._cids)
        header = dict(header)
        header["cid"] = cid
        try:
            self._sock.sendall(encode_frame(msg_type, header, sections))
            resp_type, resp, resp_sections = read_frame(self._reader)
        except (EOFError, OSError) as exc:
            raise ConnectionError(f"store connection lost: {exc}") from exc
        self._check(resp_type, resp, cid)
        return resp_type, resp, resp_sections, cid

    def _read_followup(self, cid):
        try:
            resp_type, resp, resp_sections = read_frame(self._reader)
        except (EOFError, OSError) as exc:
            raise ConnectionError(f"store connection lost: {exc}") from exc
        self._check(resp_type, resp, cid)
        return resp_type, resp, resp_sections

    @staticmethod
    def _check(resp_type, resp, cid):
        if resp.get("cid") != cid:
            raise ProtocolError(
                f"correlation id mismatch: sent {cid}, got {resp.get('cid')}"
            )
        if resp_type == T_ERROR:
            kind = resp.get("kind", "protocol")
            message = resp.get("error", "remote error")
            if kind == "store":
                raise StoreError(message)
            if kind == "checkpoint":
                raise CheckpointError(message)
            raise ProtocolError(message)

    # -- operations ----------------------------------------------------------

    def append_episode(self, episode: Episode) -> dict:
        counters = None
        with self._lock:
            for fields, part in episode_chunks(episode):
                fields = dict(fields)
                _, resp, _, _ = self._roundtrip(T_APPEND, fields, pack_records(part))
                counters = resp
        return counters

    def drain(self, min_episodes: int, *, block: bool = False, timeout: float = None):
        header = {"min_episodes": min_episodes, "block": block}
        if timeout is not None:
            header["timeout"] = timeout
        with self._lock:
            resp_type, resp, sections, cid = self._roundtrip(T_DRAIN_REQ, header)
            episodes = []
            partial_records = []
            while True:
                if resp_type != T_DRAIN_RESP:
                    raise ProtocolError(f"unexpected drain response type 0x{resp_type:02x}")
                if not resp.get("more", False):
                    if not resp.get("ready", True) and not episodes:
                        return None
                    if partial_records:
                        raise ProtocolError("drain stream ended mid-episode")
                    return episodes
                partial_records.extend(unpack_records(resp, sections))
                if resp.get("last", True):
                    episodes.append(Episode(
                        episode_id=int(resp["episode_id"]),
                        worker_id=int(resp["worker_id"]),
                        policy_version=int(resp.get("policy_version", 0)),
                        records=partial_records,
                        progress=float(resp.get("progress", 0.0)),
                    ))
                    partial_records = []
                resp_type, resp, sections = self._read_followup(cid)

    def publish_checkpoint(self, data: bytes) -> int:
        with self._lock:
            _, resp, _, _ = self._roundtrip(
                T_PUBLISH, {}, [("checkpoint", np.frombuffer(data, dtype="|u1"))])
        return int(resp["version"])

    def fetch_checkpoint(self):
        with self._lock:
            _, resp, sections, _ = self._roundtrip(T_FETCH_REQ, {})
        if resp.get("empty", False):
            return None
        return int(resp["version"]), sections["checkpoint"].tobytes()

    def counters(self) -> dict:
        with self._lock:
            _, resp, _, _ = self._roundtrip(T_COUNTERS, {})
        return {k: v for k, v in resp.items() if k not in ("cid", "sections")}
