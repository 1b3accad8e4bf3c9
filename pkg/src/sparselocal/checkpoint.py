"""Self-describing binary checkpoints for trained models.

Layout: an 8-byte prelude (magic ``SLLM`` and a little-endian uint32
format version), a little-endian uint32 header length, a JSON header,
then the raw parameter payload. The header records the model
configuration, the training schedule, per-parameter names, shapes,
dtypes and offsets, plus a SHA-256 of the payload. Parameters are stored
little-endian at their native 64-bit precision so a load reproduces the
saved model's predictions bit for bit on any host.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError
from .model import GatedLocalLinear, ModelConfig

MAGIC = b"SLLM"
VERSION = 1


def save_checkpoint(path, model, schedule=None, phase_log=None, manifest_sha256=None):
    """Write the model (and training metadata) to ``path``."""
    named = model.named_parameters()
    names = sorted(named)
    entries = []
    chunks = []
    offset = 0
    for name in names:
        data = np.ascontiguousarray(named[name].data, dtype="<f8")
        raw = data.tobytes()
        entries.append(
            {"name": name, "shape": list(data.shape), "dtype": "<f8", "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    log_digest = None
    if phase_log is not None:
        log_lines = "\n".join(json.dumps(rec, sort_keys=True) for rec in phase_log)
        log_digest = hashlib.sha256(log_lines.encode("utf-8")).hexdigest()
    header = {
        "config": model.config.to_dict(),
        "schedule": schedule.to_dict() if schedule is not None else None,
        "params": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "phase_log_sha256": log_digest,
        "dataset_manifest_sha256": manifest_sha256,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path):
    """Rebuild the model from ``path``; returns (model, header dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = raw[12 + header_len :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch; file is corrupt")

    config = ModelConfig.from_dict(header["config"])
    model = GatedLocalLinear(config, np.random.default_rng(0))
    named = model.named_parameters()
    expected = set(named)
    stored = {entry["name"] for entry in header["params"]}
    if stored != expected:
        raise CheckpointError(
            f"{path}: parameter set mismatch (missing {sorted(expected - stored)[:3]},"
            f" unexpected {sorted(stored - expected)[:3]})"
        )
    for entry in header["params"]:
        tensor = named[entry["name"]]
        lo, nbytes = entry["offset"], entry["nbytes"]
        values = np.frombuffer(payload[lo : lo + nbytes], dtype=entry["dtype"])
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)) or shape != tensor.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for parameter {entry['name']!r}")
        tensor.data[...] = values.reshape(shape).astype(np.float64)
    return model, header
