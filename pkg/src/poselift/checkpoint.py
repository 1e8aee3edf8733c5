"""Checkpoint file format.

Layout: one line of UTF-8 JSON (format version, model config, tensor
manifest mapping name -> shape), then all tensors as little-endian
float32 concatenated in manifest order, then a 32-byte SHA-256 digest of
header + payload. Values round to float32 on save and widen on load.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .autodiff import Tensor
from .errors import (
    CheckpointDigestError,
    CheckpointManifestError,
    CheckpointVersionError,
)
from .network import ModelConfig, ModelParams, parameter_shapes

FORMAT_VERSION = 1


def serialize_params(params: ModelParams, cfg: ModelConfig) -> bytes:
    shapes = parameter_shapes(cfg)
    if list(params.names()) != list(shapes):
        raise CheckpointManifestError("parameter names do not match the config manifest")
    header = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "manifest": {name: list(shape) for name, shape in shapes.items()},
    }
    header_bytes = (json.dumps(header) + "\n").encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(params[name].data, dtype="<f4").tobytes() for name in shapes
    )
    digest = hashlib.sha256(header_bytes + payload).digest()
    return header_bytes + payload + digest


def params_digest(params: ModelParams, cfg: ModelConfig) -> str:
    """Hex digest of the exact bytes a checkpoint of these values would hold."""
    return hashlib.sha256(serialize_params(params, cfg)).hexdigest()


def save_checkpoint(params: ModelParams, cfg: ModelConfig, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_params(params, cfg))


def deserialize_params(blob: bytes) -> tuple[ModelParams, ModelConfig]:
    newline = blob.find(b"\n")
    if newline < 0 or len(blob) < newline + 1 + 32:
        raise CheckpointDigestError("file too short to hold a header and digest")
    header_bytes = blob[: newline + 1]
    payload = blob[newline + 1 : -32]
    stored = blob[-32:]
    if hashlib.sha256(header_bytes + payload).digest() != stored:
        raise CheckpointDigestError("content digest mismatch (corrupt or truncated file)")

    header = json.loads(header_bytes.decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported format version {header.get('format_version')!r}"
        )
    cfg = ModelConfig(**header["config"])
    expected = parameter_shapes(cfg)
    manifest = {name: tuple(shape) for name, shape in header["manifest"].items()}
    if manifest != expected:
        raise CheckpointManifestError("tensor manifest does not match the configuration")

    total = sum(int(np.prod(shape)) for shape in expected.values())
    if len(payload) != total * 4:
        raise CheckpointManifestError(
            f"payload holds {len(payload)} bytes, manifest implies {total * 4}"
        )
    tensors: dict[str, Tensor] = {}
    offset = 0
    for name, shape in expected.items():
        count = int(np.prod(shape))
        values = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = Tensor(values.astype(np.float64).reshape(shape), requires_grad=True)
        offset += count * 4
    return ModelParams(tensors), cfg


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        return deserialize_params(fh.read())
