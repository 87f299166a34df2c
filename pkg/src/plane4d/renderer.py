"""Ray generation and emission-absorption volume rendering.

The camera is stationary at the origin of an OpenGL-style frame (x right,
y up, looking down -z), so every ray can be expressed in a normalized device
cube where it becomes axis-aligned: origin (x01, y01, 0), direction
(0, 0, 1), with the ray parameter s in [0, 1] a warped depth
(s = 1 - near / z_metric).  That makes the 4D sample point for the field
simply (x01, y01, s, t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .decoder import SceneDecoder
from .field import FeaturePlaneSet


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus the near/far slab bounding the scene.

    Pixel centers sit at integer (row, col); ``cx, cy`` are in pixel units.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    near: float
    far: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0.0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")


@dataclass(frozen=True)
class Ray:
    """A single camera ray in the normalized device cube."""

    origin: np.ndarray      # (3,) = (x01, y01, 0)
    direction: np.ndarray   # (3,) = (0, 0, 1)
    view_dir: np.ndarray    # (3,) unit vector in camera space, for shading
    s_near: float
    s_far: float
    pixel: tuple[int, int]  # (row, col)
    t: float


@dataclass
class SamplePrediction:
    """Per-sample quantities along rays, ready to composite.

    Shapes are (..., K) with colors (..., K, 3); ``s`` must be
    non-decreasing along the last axis, ``delta`` positive, ``sigma``
    non-negative.
    """

    s: torch.Tensor
    delta: torch.Tensor
    sigma: torch.Tensor
    color: torch.Tensor


@dataclass
class RenderResult:
    """Composited per-ray outputs (shapes (..., 3), (...), (...), (..., K))."""

    color: torch.Tensor
    depth: torch.Tensor
    opacity: torch.Tensor
    weights: torch.Tensor
    transmittance: torch.Tensor


def pixel_to_ndc(camera: Camera, rows, cols):
    """Map pixel coordinates to the (x01, y01) face of the unit cube.

    With the camera at the origin the projection is independent of depth:
    x01 = 0.5 + (col - cx) / width, y01 = 0.5 - (row - cy) / height.
    """
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    x01 = 0.5 + (cols - camera.cx) / camera.width
    y01 = 0.5 - (rows - camera.cy) / camera.height
    return x01, y01


def metric_to_s(camera: Camera, z: np.ndarray) -> np.ndarray:
    """Warp metric depth along the optical axis into the s in [0, 1] parameter."""
    return 1.0 - camera.near / np.asarray(z, dtype=np.float64)


def s_to_metric(camera: Camera, s: np.ndarray) -> np.ndarray:
    """Invert :func:`metric_to_s`; s -> near / (1 - s), guarded near s = 1."""
    denom = np.maximum(1.0 - np.asarray(s, dtype=np.float64), 1e-12)
    return camera.near / denom


def view_direction(camera: Camera, rows, cols) -> np.ndarray:
    """Unit camera-space view direction through pixel centers, shape (..., 3)."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    d = np.stack(
        [
            (cols - camera.cx) / camera.fx,
            -(rows - camera.cy) / camera.fy,
            -np.ones_like(cols),
        ],
        axis=-1,
    )
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def make_ray(camera: Camera, pixel: tuple[int, int], t: float) -> Ray:
    row, col = pixel
    if not (0 <= row < camera.height and 0 <= col < camera.width):
        raise ValueError(f"pixel {pixel} outside {camera.height}x{camera.width} image")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must be in [0, 1], got {t}")
    x01, y01 = pixel_to_ndc(camera, row, col)
    return Ray(
        origin=np.array([float(x01), float(y01), 0.0]),
        direction=np.array([0.0, 0.0, 1.0]),
        view_dir=view_direction(camera, row, col),
        s_near=0.0,
        s_far=1.0,
        pixel=(row, col),
        t=float(t),
    )


def make_ray_grid(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Origins (H*W, 3) and unit view directions (H*W, 3) for every pixel.

    Row-major order: index = row * width + col.
    """
    rows, cols = np.meshgrid(
        np.arange(camera.height), np.arange(camera.width), indexing="ij"
    )
    x01, y01 = pixel_to_ndc(camera, rows, cols)
    origins = np.stack([x01, y01, np.zeros_like(x01)], axis=-1).reshape(-1, 3)
    dirs = view_direction(camera, rows, cols).reshape(-1, 3)
    return origins, dirs


def stratified_samples(
    ray: Ray,
    n_samples: int,
    rng: np.random.Generator | None = None,
    jitter: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Split [s_near, s_far] into equal bins; return sample positions and widths.

    Without jitter, samples sit at bin centers; with jitter they are drawn
    uniformly inside each bin (one draw per bin from ``rng``).  Widths always
    equal the bin width, so the bins tile the interval exactly.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if jitter and rng is None:
        raise ValueError("jitter sampling needs an rng")
    width = (ray.s_far - ray.s_near) / n_samples
    edges = ray.s_near + width * np.arange(n_samples)
    offsets = rng.random(n_samples) if jitter else np.full(n_samples, 0.5)
    s = edges + offsets * width
    delta = np.full(n_samples, width)
    return s, delta


def _stratified_batch(
    n_rays: int,
    n_samples: int,
    s_near: float,
    s_far: float,
    rng: np.random.Generator | None,
    jitter: bool,
    dtype: torch.dtype,
) -> tuple[torch.Tensor, torch.Tensor]:
    width = (s_far - s_near) / n_samples
    edges = s_near + width * np.arange(n_samples)
    if jitter:
        offsets = rng.random((n_rays, n_samples))
    else:
        offsets = np.full((n_rays, n_samples), 0.5)
    s = torch.as_tensor(edges + offsets * width, dtype=dtype)
    delta = torch.full((n_rays, n_samples), width, dtype=dtype)
    return s, delta


def composite(samples: SamplePrediction) -> RenderResult:
    """Alpha-composite per-sample sigma/color into color, depth and opacity.

    Transmittance is exp(-cumsum(sigma * delta)) exclusive of the current
    sample, alpha_k = 1 - exp(-sigma_k delta_k), and weights w_k = T_k alpha_k;
    color/depth are weight sums of sample colors/positions.  Computing T from
    the exclusive cumulative optical depth (rather than a running product of
    1 - alpha) keeps sum(w) = 1 - T_final exact and is safe to differentiate
    through fully opaque samples.
    """
    s, delta, sigma, color = samples.s, samples.delta, samples.sigma, samples.color
    if not (s.shape == delta.shape == sigma.shape):
        raise ValueError("s, delta, sigma must share a shape")
    if color.shape != s.shape + (3,):
        raise ValueError(
            f"color must be {tuple(s.shape) + (3,)}, got {tuple(color.shape)}"
        )
    if s.shape[-1] == 0:
        raise ValueError("need at least one sample per ray")
    if s.shape[-1] > 1 and bool((s[..., 1:] < s[..., :-1]).any()):
        raise ValueError("sample positions must be non-decreasing along the ray")
    if bool((delta <= 0).any()):
        raise ValueError("sample widths must be positive")
    if bool((sigma < 0).any()):
        raise ValueError("densities must be non-negative")

    optical = sigma * delta
    accumulated = torch.cumsum(optical, dim=-1)
    # Exclusive cumulative sum: T_0 = 1.
    exclusive = accumulated - optical
    transmittance = torch.exp(-exclusive)
    alpha = 1.0 - torch.exp(-optical)
    weights = transmittance * alpha
    out_color = (weights.unsqueeze(-1) * color).sum(dim=-2)
    out_depth = (weights * s).sum(dim=-1)
    opacity = weights.sum(dim=-1)
    return RenderResult(
        color=out_color,
        depth=out_depth,
        opacity=opacity,
        weights=weights,
        transmittance=transmittance,
    )


def render_rays(
    planes: FeaturePlaneSet,
    decoder: SceneDecoder,
    origins: torch.Tensor,
    view_dirs: torch.Tensor,
    times: torch.Tensor,
    n_samples: int,
    s_far: float,
    rng: np.random.Generator | None = None,
    jitter: bool = False,
) -> RenderResult:
    """Render a batch of axis-aligned NDC rays through the field.

    ``origins`` (R, 3) carry (x01, y01, 0); ``view_dirs`` (R, 3) are unit
    camera-space directions used only for shading; ``times`` (R,) are in
    [0, 1].  Samples span [0, s_far] per ray.
    """
    if origins.ndim != 2 or origins.shape[-1] != 3:
        raise ValueError(f"origins must be (R, 3), got {tuple(origins.shape)}")
    if view_dirs.shape != origins.shape:
        raise ValueError("view_dirs must match origins in shape")
    if times.shape != origins.shape[:1]:
        raise ValueError("times must be (R,)")
    n_rays = origins.shape[0]
    dtype = origins.dtype
    s, delta = _stratified_batch(n_rays, n_samples, 0.0, s_far, rng, jitter, dtype)

    points = torch.empty(n_rays, n_samples, 4, dtype=dtype)
    points[..., 0] = origins[:, None, 0]
    points[..., 1] = origins[:, None, 1]
    points[..., 2] = s
    points[..., 3] = times[:, None]

    ray_xyt = torch.stack([origins[:, 0], origins[:, 1], times], dim=-1)
    fused = planes.query_fused_rays(ray_xyt, s)
    enc_point = decoder.encode_point(points)
    sigma, geo_feature = decoder.geometry_forward(fused, enc_point)
    enc_dir = decoder.encode_direction(view_dirs)
    enc_dir = enc_dir[:, None, :].expand(n_rays, n_samples, enc_dir.shape[-1])
    color = decoder.color_forward(geo_feature, enc_dir)
    return composite(SamplePrediction(s=s, delta=delta, sigma=sigma, color=color))


def render_ray(
    planes: FeaturePlaneSet,
    decoder: SceneDecoder,
    ray: Ray,
    n_samples: int,
    rng: np.random.Generator | None = None,
    jitter: bool = False,
) -> RenderResult:
    dtype = planes.planes[0].dtype
    origins = torch.as_tensor(ray.origin, dtype=dtype).unsqueeze(0)
    view_dirs = torch.as_tensor(ray.view_dir, dtype=dtype).unsqueeze(0)
    times = torch.tensor([ray.t], dtype=dtype)
    out = render_rays(
        planes, decoder, origins, view_dirs, times, n_samples, ray.s_far,
        rng=rng, jitter=jitter,
    )
    return RenderResult(
        color=out.color[0],
        depth=out.depth[0],
        opacity=out.opacity[0],
        weights=out.weights[0],
        transmittance=out.transmittance[0],
    )


def render_frame(
    planes: FeaturePlaneSet,
    decoder: SceneDecoder,
    camera: Camera,
    t: float,
    n_samples: int,
    chunk: int = 8192,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render a full deterministic frame (no jitter, no gradients).

    Returns (color (H, W, 3), ndc depth (H, W), opacity (H, W)) as float32
    numpy arrays.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must be in [0, 1], got {t}")
    dtype = planes.planes[0].dtype
    origins_np, dirs_np = make_ray_grid(camera)
    s_far = 1.0
    n = origins_np.shape[0]
    colors = np.empty((n, 3), dtype=np.float32)
    depths = np.empty(n, dtype=np.float32)
    opacities = np.empty(n, dtype=np.float32)
    with torch.no_grad():
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            origins = torch.as_tensor(origins_np[start:stop], dtype=dtype)
            dirs = torch.as_tensor(dirs_np[start:stop], dtype=dtype)
            times = torch.full((stop - start,), t, dtype=dtype)
            out = render_rays(planes, decoder, origins, dirs, times, n_samples, s_far)
            colors[start:stop] = out.color.numpy()
            depths[start:stop] = out.depth.numpy()
            opacities[start:stop] = out.opacity.numpy()
    h, w = camera.height, camera.width
    return colors.reshape(h, w, 3), depths.reshape(h, w), opacities.reshape(h, w)
