"""
Model file format.

    magic b"WRCK" | u16 format version | u32 header length | header JSON (utf-8)
    | little-endian f32 weight blob | sha256 digest of everything before it

The header holds the architecture, class map, per-tensor name/shape/offset
and `extras` (pipeline config, normalizer statistics, CWT config, action kind).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct

import numpy as np
from pydantic import ValidationError

import config
from errors import CheckpointError, ChecksumError, FormatVersionError
from model_graph import ArchitectureSpec, ModelGraph

logger = logging.getLogger(__name__)

_PREFIX = struct.Struct("<4sHI")
_DIGEST_SIZE = hashlib.sha256().digest_size


def model_to_bytes(model: ModelGraph) -> bytes:
    tensors, blobs, offset = [], [], 0
    for name in sorted(model.params):
        data = np.ascontiguousarray(model.params[name], dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(model.params[name].shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "architecture": model.arch.model_dump(mode="json"),
        "class_map": {str(k): v for k, v in sorted(model.class_map.items())},
        "tensors": tensors,
        "extras": model.extras,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(config.MODEL_MAGIC, config.MODEL_FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def model_from_bytes(raw: bytes, source="<bytes>") -> ModelGraph:
    if len(raw) < _PREFIX.size + _DIGEST_SIZE:
        raise ChecksumError(f"{source}: file too short to be a model ({len(raw)} bytes)")
    body, digest = raw[:-_DIGEST_SIZE], raw[-_DIGEST_SIZE:]
    magic, version, header_len = _PREFIX.unpack_from(body)
    if magic != config.MODEL_MAGIC:
        raise CheckpointError(f"{source}: not a model file (magic {magic!r})")
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{source}: checksum mismatch (file truncated or corrupted)")
    if version != config.MODEL_FORMAT_VERSION:
        raise FormatVersionError(f"{source}: format version {version}, this build reads version {config.MODEL_FORMAT_VERSION}")

    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + header_len].decode("utf-8"))
        arch = ArchitectureSpec.model_validate(header["architecture"])
    except (ValueError, KeyError, ValidationError) as err:
        raise CheckpointError(f"{source}: cannot parse graph description for format version {version}: {err}") from err

    blob = body[start + header_len:]
    params = {}
    for t in header["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(blob):
            raise ChecksumError(f"{source}: tensor '{t['name']}' runs past the end of the weight blob")
        params[t["name"]] = np.frombuffer(blob[t["offset"]:end], dtype="<f4").reshape(t["shape"]).astype(np.float32)
    class_map = {int(k): v for k, v in header["class_map"].items()}
    return ModelGraph(arch, class_map, params=params, dtype=np.float32, extras=header.get("extras", {}))


def save_model(model: ModelGraph, path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
    with open(path, "wb") as f:
        f.write(model_to_bytes(model))
    logger.info(f"Saved model ({model.parameter_count} parameters) to {path}")
    return str(path)


def load_model(path) -> ModelGraph:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as err:
        raise CheckpointError(f"cannot read model file {path}: {err}") from err
    return model_from_bytes(raw, source=str(path))
