"""Binary checkpoint format for policy/value parameters.

Layout: magic ``DRCK``, format version u16, metadata length u32, UTF-8 JSON
metadata, named parameter blobs as little-endian float32, and a trailing
CRC32 over all preceding bytes. Header integers and the CRC are big-endian.

Metadata carries the tensor name/shape/offset table, the checkpoint version
number, cumulative counters, the creation time, and the network architecture
description needed to rebuild identical nets on load. JSON keys are sorted so
serialization is byte-deterministic.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from dracer.errors import CheckpointError
from dracer.nets import PolicyValueNets

__all__ = [
    "ParameterCheckpoint",
    "serialize_checkpoint",
    "deserialize_checkpoint",
    "checkpoint_from_nets",
    "nets_from_checkpoint",
    "write_checkpoint_file",
    "read_checkpoint_file",
]

MAGIC = b"DRCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct(">4sHI")


@dataclass
class ParameterCheckpoint:
    """One published parameter set plus its bookkeeping."""

    version: int
    parameters: dict
    net_spec: dict
    counters: dict = field(default_factory=dict)
    created_at: float = 0.0

    def metadata(self) -> dict:
        return {
            "version": self.version,
            "counters": self.counters,
            "created_at": self.created_at,
            "net_spec": self.net_spec,
        }


def serialize_checkpoint(ckpt: ParameterCheckpoint) -> bytes:
    blobs = []
    tensors = []
    offset = 0
    for name in sorted(ckpt.parameters):
        arr = np.ascontiguousarray(ckpt.parameters[name], dtype="<f4")
        raw = arr.tobytes()
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    meta = dict(ckpt.metadata())
    meta["tensors"] = tensors
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, len(meta_bytes)) + meta_bytes + b"".join(blobs)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    return body + struct.pack(">I", crc)


def deserialize_checkpoint(data: bytes) -> ParameterCheckpoint:
    if len(data) < _HEADER.size + 4:
        raise CheckpointError(f"checkpoint truncated: {len(data)} bytes")
    magic, fmt, meta_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if fmt != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {fmt}")
    body, trailer = data[:-4], data[-4:]
    crc = zlib.crc32(body) & 0xFFFFFFFF
    (stored,) = struct.unpack(">I", trailer)
    if crc != stored:
        raise CheckpointError("checkpoint checksum mismatch")
    meta_start = _HEADER.size
    meta_end = meta_start + meta_len
    if meta_end > len(body):
        raise CheckpointError("checkpoint metadata overruns file")
    try:
        meta = json.loads(body[meta_start:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint metadata unreadable: {exc}") from exc
    blob = body[meta_end:]
    params = {}
    for entry in meta.get("tensors", []):
        start = int(entry["offset"])
        end = start + int(entry["nbytes"])
        if end > len(blob):
            raise CheckpointError(f"tensor {entry['name']!r} overruns blob section")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(entry["shape"])
        params[entry["name"]] = arr.copy()
    return ParameterCheckpoint(
        version=int(meta["version"]),
        parameters=params,
        net_spec=dict(meta.get("net_spec", {})),
        counters=dict(meta.get("counters", {})),
        created_at=float(meta.get("created_at", 0.0)),
    )


def checkpoint_from_nets(nets: PolicyValueNets, version: int, *, counters=None,
                         created_at: float = 0.0) -> ParameterCheckpoint:
    params = {name: arr.copy() for name, arr in nets.state_dict().items()}
    return ParameterCheckpoint(
        version=version,
        parameters=params,
        net_spec=dict(nets.spec),
        counters=dict(counters or {}),
        created_at=created_at,
    )


def nets_from_checkpoint(ckpt: ParameterCheckpoint) -> PolicyValueNets:
    nets = PolicyValueNets.from_spec(ckpt.net_spec)
    nets.load_state_dict(ckpt.parameters)
    return nets


def write_checkpoint_file(ckpt: ParameterCheckpoint, path: str):
    """Atomic write: a reader never observes a partially written file."""
    data = serialize_checkpoint(ckpt)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_checkpoint_file(path: str) -> ParameterCheckpoint:
    with open(path, "rb") as fh:
        return deserialize_checkpoint(fh.read())
