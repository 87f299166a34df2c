"""Decoder heads that turn fused plane features into density and color.

A small geometry MLP maps (fused feature, encoded 4D point) to a softplus
density and an intermediate appearance feature; a second MLP maps that
feature plus the encoded view direction to sigmoid RGB.  Weights use Glorot
uniform init with zero biases, drawn from a numpy generator so construction
is reproducible for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class EncoderConfig:
    """Frequency counts for the sinusoidal encodings of points and directions."""

    point_frequencies: int = 4
    direction_frequencies: int = 4

    def __post_init__(self):
        if self.point_frequencies < 0 or self.direction_frequencies < 0:
            raise ValueError("frequency counts must be non-negative")


def encoded_width(input_dim: int, num_frequencies: int) -> int:
    return input_dim * (2 * num_frequencies + 1)


def posenc(x: torch.Tensor, num_frequencies: int) -> torch.Tensor:
    """Sinusoidal encoding [x, sin(2^l pi x), cos(2^l pi x)] for l < L.

    Operates on the last axis; output width is ``d * (2L + 1)``.  L = 0
    returns the input unchanged.
    """
    if num_frequencies < 0:
        raise ValueError("num_frequencies must be non-negative")
    if num_frequencies == 0:
        return x
    freqs = (2.0 ** torch.arange(num_frequencies, dtype=x.dtype, device=x.device)) * math.pi
    angles = x.unsqueeze(-1) * freqs  # (..., d, L)
    parts = [x]
    for l in range(num_frequencies):
        parts.append(torch.sin(angles[..., l]))
        parts.append(torch.cos(angles[..., l]))
    return torch.cat(parts, dim=-1)


class Mlp(nn.Module):
    """Plain ReLU MLP; the final linear layer is left un-activated."""

    def __init__(self, in_width: int, hidden_width: int, hidden_depth: int, out_width: int):
        super().__init__()
        if hidden_depth < 1:
            raise ValueError("hidden_depth must be >= 1")
        widths = [in_width] + [hidden_width] * hidden_depth + [out_width]
        self.layers = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1]) for i in range(len(widths) - 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            x = F.relu(layer(x))
        return self.layers[-1](x)


class SceneDecoder(nn.Module):
    """Geometry and color heads over fused plane features.

    geometry: (fused, enc(point)) -> (density >= 0, appearance feature)
    color:    (appearance feature, enc(view dir)) -> rgb in (0, 1)
    """

    def __init__(
        self,
        fused_width: int,
        encoder: EncoderConfig = EncoderConfig(),
        hidden_width: int = 64,
        hidden_depth: int = 2,
        geo_feature_width: int = 15,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if fused_width < 1 or geo_feature_width < 1:
            raise ValueError("feature widths must be positive")
        self.encoder = encoder
        self.fused_width = fused_width
        self.geo_feature_width = geo_feature_width
        geo_in = fused_width + encoded_width(4, encoder.point_frequencies)
        color_in = geo_feature_width + encoded_width(3, encoder.direction_frequencies)
        self.geometry_mlp = Mlp(geo_in, hidden_width, hidden_depth, 1 + geo_feature_width)
        self.color_mlp = Mlp(color_in, hidden_width, hidden_depth, 3)
        self._init_weights(seed)
        if dtype is not torch.float32:
            self.to(dtype)

    def _init_weights(self, seed: int):
        rng = np.random.default_rng(seed)
        for module in (self.geometry_mlp, self.color_mlp):
            for layer in module.layers:
                fan_out, fan_in = layer.weight.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
                with torch.no_grad():
                    layer.weight.copy_(torch.as_tensor(w, dtype=layer.weight.dtype))
                    layer.bias.zero_()

    def encode_point(self, points: torch.Tensor) -> torch.Tensor:
        if points.shape[-1] != 4:
            raise ValueError(f"points must be (..., 4), got {tuple(points.shape)}")
        return posenc(points, self.encoder.point_frequencies)

    def encode_direction(self, dirs: torch.Tensor) -> torch.Tensor:
        if dirs.shape[-1] != 3:
            raise ValueError(f"directions must be (..., 3), got {tuple(dirs.shape)}")
        return posenc(dirs, self.encoder.direction_frequencies)

    def geometry_forward(
        self, fused: torch.Tensor, enc_point: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if fused.shape[-1] != self.fused_width:
            raise ValueError(
                f"fused feature width {fused.shape[-1]} != expected {self.fused_width}"
            )
        expected = encoded_width(4, self.encoder.point_frequencies)
        if enc_point.shape[-1] != expected:
            raise ValueError(
                f"encoded point width {enc_point.shape[-1]} != expected {expected}"
            )
        raw = self.geometry_mlp(torch.cat([fused, enc_point], dim=-1))
        sigma = F.softplus(raw[..., 0])
        return sigma, raw[..., 1:]

    def color_forward(self, geo_feature: torch.Tensor, enc_dir: torch.Tensor) -> torch.Tensor:
        if geo_feature.shape[-1] != self.geo_feature_width:
            raise ValueError(
                f"appearance feature width {geo_feature.shape[-1]} != "
                f"expected {self.geo_feature_width}"
            )
        expected = encoded_width(3, self.encoder.direction_frequencies)
        if enc_dir.shape[-1] != expected:
            raise ValueError(
                f"encoded direction width {enc_dir.shape[-1]} != expected {expected}"
            )
        return torch.sigmoid(self.color_mlp(torch.cat([geo_feature, enc_dir], dim=-1)))


def init_decoder(
    fused_width: int,
    encoder: EncoderConfig = EncoderConfig(),
    hidden_width: int = 64,
    hidden_depth: int = 2,
    geo_feature_width: int = 15,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> SceneDecoder:
    return SceneDecoder(
        fused_width,
        encoder=encoder,
        hidden_width=hidden_width,
        hidden_depth=hidden_depth,
        geo_feature_width=geo_feature_width,
        seed=seed,
        dtype=dtype,
    )
