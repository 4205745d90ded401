"""Binary model files.

Layout::

    b"QCSE" | u16 version | u32 header length | JSON header | float32 tensors | u32 CRC32

All integers are little-endian. The header is UTF-8 JSON with sorted keys and
holds the network config, the seed, free-form metadata and a manifest of
``{name, shape, offset}`` entries; offsets count from the first tensor byte.
The CRC covers the header and tensor bytes. Normalisation statistics are stored
as the tensors ``norm.mean`` and ``norm.std``.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import NormStats
from .network import Network, NetworkConfig

MAGIC = b"QCSE"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelTruncatedError(ModelFormatError):
    pass


class ModelChecksumError(ModelFormatError):
    pass


@dataclass
class ModelBundle:
    network: Network
    stats: NormStats
    meta: dict = field(default_factory=dict)


def _tensors(net: Network, stats: NormStats):
    yield from net.named_tensors(include_state=True)
    yield "norm.mean", stats.mean
    yield "norm.std", stats.std


def model_bytes(net: Network, stats: NormStats, meta: dict | None = None) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in _tensors(net, stats):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "config": net.config.to_dict(),
        "seed": net.seed,
        "meta": meta or {},
        "tensors": manifest,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = head + b"".join(chunks)
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + body + _CRC.pack(zlib.crc32(body))


def save_model(net: Network, stats: NormStats, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(model_bytes(net, stats, meta))
    return path


def parse_model(blob: bytes) -> ModelBundle:
    if len(blob) < _PREFIX.size:
        raise ModelTruncatedError("model file is shorter than its fixed prefix")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ModelVersionError(f"not a model file (magic {magic!r}, expected {MAGIC!r})")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + head_len + _CRC.size:
        raise ModelTruncatedError("model file ends inside its header")
    try:
        header = json.loads(blob[start:start + head_len].decode("utf-8"))
        expected = start + head_len + int(header["payload_bytes"]) + _CRC.size
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        # a damaged header is as likely a checksum problem as a truncation; check the CRC first
        body = blob[start:-_CRC.size]
        if zlib.crc32(body) != _CRC.unpack_from(blob, len(blob) - _CRC.size)[0]:
            raise ModelChecksumError("model file failed its CRC32 check") from exc
        raise ModelFormatError(f"unreadable model header: {exc}") from exc
    if len(blob) < expected:
        raise ModelTruncatedError(f"model file has {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise ModelFormatError(f"model file has {len(blob) - expected} trailing bytes")
    body = blob[start:expected - _CRC.size]
    (crc,) = _CRC.unpack_from(blob, expected - _CRC.size)
    if zlib.crc32(body) != crc:
        raise ModelChecksumError("model file failed its CRC32 check")

    payload = memoryview(body)[head_len:]
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float32)

    net = Network(NetworkConfig.from_dict(header["config"]), seed=header["seed"])
    for name, target in net.named_tensors(include_state=True):
        if name not in arrays:
            raise ModelFormatError(f"model file lacks tensor {name}")
        if arrays[name].shape != target.shape:
            raise ModelFormatError(f"tensor {name} has shape {arrays[name].shape}, "
                                   f"network expects {target.shape}")
        target[...] = arrays[name]
    stats = NormStats(arrays["norm.mean"], arrays["norm.std"])
    return ModelBundle(net, stats, header.get("meta", {}))


def load_model(path) -> ModelBundle:
    return parse_model(Path(path).read_bytes())
