"""``LDNM`` checkpoint files.

Layout (little-endian)::

    b"LDNM" | u32 version=1 | u32 header_len | header (UTF-8 JSON) | payload

The JSON header holds ``config`` (a ModelConfig dict), ``payload_bytes`` and a
``tensors`` manifest of ``{name, shape, offset}`` entries, offsets relative to
the start of the payload.  Tensors are contiguous f32 blobs in manifest order.
Extra JSON keys (e.g. training metadata) are carried in ``meta``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, IntegrityError, TruncatedError, VersionError
from .model import ModelConfig, Params, check_params, param_shapes

MAGIC = b"LDNM"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def encode_checkpoint(params: Params, config: ModelConfig, meta: dict | None = None) -> bytes:
    check_params(params, config)
    manifest, blobs, offset = [], [], 0
    for name in param_shapes(config):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"config": config.to_dict(), "payload_bytes": offset, "tensors": manifest, "meta": meta or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(blobs)


def decode_checkpoint(blob: bytes) -> tuple[Params, ModelConfig, dict]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError("not an LDNM checkpoint (bad magic)")
    if len(blob) < _PREFIX.size:
        raise TruncatedError("checkpoint prefix truncated")
    _, version, hlen = _PREFIX.unpack_from(blob)
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise TruncatedError("checkpoint header truncated")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        manifest = header["tensors"]
        declared = int(header["payload_bytes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}") from None
    payload = blob[start:]
    if len(payload) < declared:
        raise TruncatedError(f"payload has {len(payload)} bytes, header declares {declared}")
    if len(payload) > declared:
        raise IntegrityError(f"{len(payload) - declared} unexpected trailing bytes")
    expected = param_shapes(config)
    params, cursor = {}, 0
    for entry in manifest:
        name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if expected.get(name) != shape:
            raise IntegrityError(f"manifest shape {shape} for {name!r} disagrees with config ({expected.get(name)})")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset != cursor or offset + nbytes > declared:
            raise IntegrityError(f"tensor {name!r} at offset {offset} overruns or skips payload bytes")
        params[name] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)
        cursor += nbytes
    if cursor != declared:
        raise IntegrityError(f"manifest covers {cursor} bytes of a {declared}-byte payload")
    if set(params) != set(expected):
        raise IntegrityError(f"manifest is missing tensors: {sorted(set(expected) - set(params))}")
    return params, config, header.get("meta", {})


def save_checkpoint(path, params: Params, config: ModelConfig, meta: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, config, meta))


def load_checkpoint(path) -> tuple[Params, ModelConfig]:
    params, config, _ = decode_checkpoint(Path(path).read_bytes())
    return params, config
