"""Procedural RGBD test scene with a known analytic reconstruction target.

The scene is three fronto-parallel layers seen by a stationary camera:

* a textured background plane (smooth sum of low-frequency cosines),
* a shaded disk gliding on a sinusoidal path in front of it,
* a flat vertical bar sweeping across the view closest to the camera.

The bar is the *occluder*: visibility masks are exactly its complement, and
the stored ground truth (``gt_frame``/``gt_depth``) is the scene with the
bar removed.  Everything is generated in closed form, so depth maps and the
reconstruction target are exact up to PNG quantization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .renderer import Camera
from .scene_io import Dataset


@dataclass(frozen=True)
class SynthSceneSpec:
    """Geometry, appearance and motion parameters of the procedural scene."""

    width: int = 64
    height: int = 64
    frame_count: int = 30
    fps: float = 10.0
    focal: float = 64.0
    near: float = 1.0
    far: float = 8.0

    background_depth: float = 4.0
    texture_waves: int = 6
    texture_contrast: float = 0.35
    # A band of higher-frequency waves whose reconstruction needs the finer
    # plane scales; coarse-only models low-pass it away.
    texture_detail_waves: int = 4
    texture_detail_contrast: float = 0.3
    texture_detail_band: tuple[int, int] = (8, 13)

    object_depth: float = 2.0
    object_radius: float = 9.0            # pixels
    object_color: tuple[float, float, float] = (0.85, 0.45, 0.2)
    path_center: tuple[float, float] = (0.5, 0.45)      # fraction of image
    path_amplitude: tuple[float, float] = (0.2, 0.12)   # fraction of image
    path_cycles: float = 1.0

    occluder: bool = True
    occluder_depth: float = 1.4
    occluder_width: float = 0.18          # fraction of image width
    occluder_color: tuple[float, float, float] = (0.15, 0.12, 0.1)
    occluder_cycles: float = 1.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8")
        if self.frame_count < 2:
            raise ValueError("need at least 2 frames")
        depths = [self.background_depth, self.object_depth]
        if self.occluder:
            depths.append(self.occluder_depth)
        if not all(self.near < d < self.far for d in depths):
            raise ValueError("all layer depths must lie strictly inside (near, far)")
        if not self.object_depth < self.background_depth:
            raise ValueError("object must sit in front of the background")
        if self.occluder and not self.occluder_depth < self.object_depth:
            raise ValueError("occluder must sit in front of the object")
        if not 0.0 < self.occluder_width < 0.5:
            raise ValueError("occluder width must be a fraction in (0, 0.5)")
        if self.object_radius <= 1.0:
            raise ValueError("object radius must exceed one pixel")

    @property
    def camera(self) -> Camera:
        return Camera(
            width=self.width,
            height=self.height,
            fx=self.focal,
            fy=self.focal,
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
            near=self.near,
            far=self.far,
        )


def _background_texture(spec: SynthSceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Smooth per-channel cosine-sum texture, (H, W, 3) in [0.02, 0.98]."""
    rows, cols = np.meshgrid(
        np.arange(spec.height), np.arange(spec.width), indexing="ij"
    )
    u = cols / (spec.width - 1)
    v = rows / (spec.height - 1)
    img = np.full((spec.height, spec.width, 3), 0.5)
    base_amp = spec.texture_contrast / spec.texture_waves
    for _ in range(spec.texture_waves):
        fu = rng.integers(0, 4)
        fv = rng.integers(0, 4)
        if fu == 0 and fv == 0:
            fu = 1
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = base_amp * rng.uniform(0.5, 1.5)
        channel_weight = rng.uniform(0.4, 1.0, size=3)
        wave = np.cos(2.0 * math.pi * (fu * u + fv * v) + phase)
        img += amp * wave[..., None] * channel_weight
    if spec.texture_detail_waves:
        lo, hi = spec.texture_detail_band
        detail_amp = spec.texture_detail_contrast / spec.texture_detail_waves
        for _ in range(spec.texture_detail_waves):
            f = rng.integers(lo, hi)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            fu = f * math.cos(angle)
            fv = f * math.sin(angle)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            amp = detail_amp * rng.uniform(0.5, 1.5)
            channel_weight = rng.uniform(0.4, 1.0, size=3)
            wave = np.cos(2.0 * math.pi * (fu * u + fv * v) + phase)
            img += amp * wave[..., None] * channel_weight
    return np.clip(img, 0.02, 0.98)


def _object_center(spec: SynthSceneSpec, t: float) -> tuple[float, float]:
    """Disk center in pixel coordinates (col, row) at normalized time t."""
    angle = 2.0 * math.pi * spec.path_cycles * t
    cx = (spec.path_center[0] + spec.path_amplitude[0] * math.sin(angle)) * (spec.width - 1)
    cy = (spec.path_center[1] + spec.path_amplitude[1] * math.cos(angle)) * (spec.height - 1)
    return cx, cy


def _occluder_columns(spec: SynthSceneSpec, t: float) -> tuple[int, int]:
    """Half-open [start, stop) column range covered by the bar at time t."""
    bar_width = max(1, int(round(spec.occluder_width * spec.width)))
    travel = spec.width - bar_width
    phase = 0.5 - 0.5 * math.cos(2.0 * math.pi * spec.occluder_cycles * t)
    start = int(round(phase * travel))
    return start, start + bar_width


def generate_synthetic(spec: SynthSceneSpec, seed: int = 0) -> Dataset:
    """Render the procedural scene into a :class:`Dataset` with ground truth."""
    rng = np.random.default_rng(seed)
    background = _background_texture(spec, rng)
    rows, cols = np.meshgrid(
        np.arange(spec.height, dtype=np.float64),
        np.arange(spec.width, dtype=np.float64),
        indexing="ij",
    )
    t_count = spec.frame_count
    frames = np.empty((t_count, spec.height, spec.width, 3), dtype=np.float32)
    depths = np.empty((t_count, spec.height, spec.width), dtype=np.float32)
    masks = np.empty((t_count, spec.height, spec.width), dtype=bool)
    gt_frames = np.empty_like(frames)
    gt_depths = np.empty_like(depths)

    obj_color = np.asarray(spec.object_color)
    occ_color = np.asarray(spec.occluder_color)
    v01 = rows / (spec.height - 1)

    for i in range(t_count):
        t = i / t_count
        ccol, crow = _object_center(spec, t)
        dist = np.hypot(cols - ccol, rows - crow)
        # Soft-edged paint, hard-edged geometry.
        coverage = np.clip((spec.object_radius + 0.75 - dist) / 1.5, 0.0, 1.0)
        shade = 1.0 - 0.25 * np.clip(dist / spec.object_radius, 0.0, 1.0) ** 2
        disk_rgb = obj_color[None, None, :] * shade[..., None]
        clean = background * (1.0 - coverage[..., None]) + disk_rgb * coverage[..., None]
        clean_depth = np.where(
            dist <= spec.object_radius, spec.object_depth, spec.background_depth
        )
        gt_frames[i] = clean
        gt_depths[i] = clean_depth

        if spec.occluder:
            start, stop = _occluder_columns(spec, t)
            bar = (cols >= start) & (cols < stop)
            bar_rgb = occ_color[None, None, :] * (0.9 + 0.2 * v01)[..., None]
            frames[i] = np.where(bar[..., None], bar_rgb, clean)
            depths[i] = np.where(bar, spec.occluder_depth, clean_depth)
            masks[i] = ~bar
        else:
            frames[i] = clean
            depths[i] = clean_depth
            masks[i] = True

    return Dataset(
        frames=frames,
        depths=depths,
        masks=masks,
        camera=spec.camera,
        fps=spec.fps,
        gt_frames=gt_frames,
        gt_depths=gt_depths,
    )
