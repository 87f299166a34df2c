"""Binary checkpoint format for the plane set and decoder.

Layout (all integers little-endian uint32 unless noted)::

    magic   8 bytes  b"P4DSCENE"
    version u32      currently 1
    meta    u32 length + UTF-8 JSON (model config echo + free-form metadata)
    tensors u32 count, then per tensor: u32 ndim, ndim * u32 dims,
            float32 little-endian C-order data

Tensor order is: all plane tensors scale-major in canonical plane order,
then decoder layers (geometry MLP first, then color MLP), weight before
bias.  The JSON carries enough configuration to rebuild both modules, so a
checkpoint loads standalone.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .decoder import EncoderConfig, SceneDecoder
from .field import FeaturePlaneSet, PlaneConfig
from .scene_io import atomic_write

MAGIC = b"P4DSCENE"
VERSION = 1


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or inconsistent with its config echo."""


def _model_config(planes: FeaturePlaneSet, decoder: SceneDecoder) -> dict:
    cfg = planes.config
    return {
        "planes": {
            "scales": list(cfg.scales),
            "feature_width": cfg.feature_width,
            "time_resolutions": (
                list(cfg.time_resolutions) if cfg.time_resolutions is not None else None
            ),
        },
        "decoder": {
            "hidden_width": decoder.geometry_mlp.layers[0].out_features,
            "hidden_depth": len(decoder.geometry_mlp.layers) - 1,
            "geo_feature_width": decoder.geo_feature_width,
        },
        "encoder": {
            "point_frequencies": decoder.encoder.point_frequencies,
            "direction_frequencies": decoder.encoder.direction_frequencies,
        },
    }


def _tensors(planes: FeaturePlaneSet, decoder: SceneDecoder):
    out = [p for p in planes.planes]
    for mlp in (decoder.geometry_mlp, decoder.color_mlp):
        for layer in mlp.layers:
            out.append(layer.weight)
            out.append(layer.bias)
    return out


def save_checkpoint(
    path: str,
    planes: FeaturePlaneSet,
    decoder: SceneDecoder,
    meta: dict | None = None,
):
    """Serialize the model (plus optional JSON-safe metadata) atomically."""
    doc = {"model": _model_config(planes, decoder), "meta": meta or {}}
    blob = json.dumps(doc).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(blob)), blob]
    tensors = _tensors(planes, decoder)
    parts.append(struct.pack("<I", len(tensors)))
    for t in tensors:
        arr = t.detach().to(torch.float32).numpy()
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    atomic_write(path, b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(
    path: str, dtype: torch.dtype = torch.float32
) -> tuple[FeaturePlaneSet, SceneDecoder, dict]:
    """Rebuild (planes, decoder, meta) from a checkpoint file."""
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        doc = json.loads(reader.take(reader.u32()).decode("utf-8"))
        model = doc["model"]
        plane_cfg = PlaneConfig(
            scales=tuple(model["planes"]["scales"]),
            feature_width=int(model["planes"]["feature_width"]),
            time_resolutions=(
                tuple(model["planes"]["time_resolutions"])
                if model["planes"]["time_resolutions"] is not None
                else None
            ),
        )
        enc_cfg = EncoderConfig(
            point_frequencies=int(model["encoder"]["point_frequencies"]),
            direction_frequencies=int(model["encoder"]["direction_frequencies"]),
        )
        dec = model["decoder"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed config block: {exc}") from exc

    planes = FeaturePlaneSet(plane_cfg, seed=0, dtype=dtype)
    decoder = SceneDecoder(
        plane_cfg.fused_width,
        encoder=enc_cfg,
        hidden_width=int(dec["hidden_width"]),
        hidden_depth=int(dec["hidden_depth"]),
        geo_feature_width=int(dec["geo_feature_width"]),
        seed=0,
        dtype=dtype,
    )

    expected = _tensors(planes, decoder)
    count = reader.u32()
    if count != len(expected):
        raise CheckpointError(
            f"{path}: has {count} tensors, model needs {len(expected)}"
        )
    for i, target in enumerate(expected):
        ndim = reader.u32()
        if ndim > 8:
            raise CheckpointError(f"{path}: tensor {i} has implausible rank {ndim}")
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        if shape != tuple(target.shape):
            raise CheckpointError(
                f"{path}: tensor {i} shape {shape} != expected {tuple(target.shape)}"
            )
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(shape)
        with torch.no_grad():
            target.copy_(torch.as_tensor(arr.copy(), dtype=dtype))
    if reader.pos != len(reader.data):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return planes, decoder, doc.get("meta", {})
