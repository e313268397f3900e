"""Versioned binary checkpoints.

Layout: one JSON header line (format tag, version, phase, step, seed,
configs, tensor directory with offsets), then the raw little-endian
float64 blobs in directory order, then a 4-byte little-endian CRC32 of
everything before it.  Loading verifies the CRC and version, so a
truncated or bit-flipped file fails loudly.  Save/load round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from ..errors import CheckpointError
from .model import ModelParams, NetConfig

FORMAT_TAG = "gnmap-checkpoint"
VERSION = 1


def checkpoint_bytes(mp: ModelParams, phase: str, step: int) -> bytes:
    tensors = []
    blobs = []
    offset = 0
    for name, p in mp.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        tensors.append(
            {"name": name, "shape": list(p.data.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": FORMAT_TAG,
        "version": VERSION,
        "phase": phase,
        "step": step,
        "seed": mp.seed,
        "configs": mp.net.to_dict(),
        "tensors": tensors,
    }
    body = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
    body += b"\n" + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(mp: ModelParams, path: str, phase: str, step: int) -> None:
    data = checkpoint_bytes(mp, phase, step)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path: str) -> tuple[ModelParams, dict]:
    """Returns the reconstructed parameters and the header metadata."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 5:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    body, trailer = raw[:-4], raw[-4:]
    if struct.pack("<I", zlib.crc32(body)) != trailer:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    newline = body.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header")
    try:
        header = json.loads(body[:newline].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: version {header.get('version')} unsupported (expected {VERSION})"
        )
    payload = body[newline + 1 :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        lo = entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} extends past end of file")
        arrays[entry["name"]] = (
            np.frombuffer(payload[lo:hi], dtype="<f8")
            .astype(np.float64)
            .reshape(entry["shape"])
        )
    net = NetConfig.from_dict(header["configs"])
    mp = ModelParams(net, seed=header["seed"], arrays=arrays)
    meta = {"phase": header["phase"], "step": header["step"], "seed": header["seed"]}
    return mp, meta
