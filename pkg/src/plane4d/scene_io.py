"""Dataset container, on-disk layout, depth conversions, and point clouds.

A scene directory holds ``manifest.json`` plus per-frame PNGs::

    frame_0000.png   8-bit RGB observed color
    depth_0000.png   16-bit grayscale, metric depth * depth_scale
    mask_0000.png    8-bit, 255 = scene visible, 0 = occluder

Synthetic scenes additionally store ``gt_frame_*.png`` / ``gt_depth_*.png``
with the occluder removed, used only for evaluation.
"""

from __future__ import annotations

import json
import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .renderer import Camera, metric_to_s, s_to_metric


class DatasetError(RuntimeError):
    """A scene directory is missing files or internally inconsistent."""


@dataclass
class Dataset:
    """An in-memory RGBD video of a scene seen by one stationary camera.

    ``frames`` (T, H, W, 3) float32 in [0, 1]; ``depths`` (T, H, W) float32
    metric, 0 = invalid; ``masks`` (T, H, W) bool, True where the scene
    (not an occluder) is visible.  ``gt_frames`` / ``gt_depths`` are the
    occluder-free ground truth when known, else None.
    """

    frames: np.ndarray
    depths: np.ndarray
    masks: np.ndarray
    camera: Camera
    fps: float = 10.0
    gt_frames: np.ndarray | None = None
    gt_depths: np.ndarray | None = None

    def __post_init__(self):
        f, d, m = self.frames, self.depths, self.masks
        if f.ndim != 4 or f.shape[-1] != 3:
            raise ValueError(f"frames must be (T, H, W, 3), got {f.shape}")
        if d.shape != f.shape[:3] or m.shape != f.shape[:3]:
            raise ValueError(
                f"depths {d.shape} / masks {m.shape} must match frames {f.shape[:3]}"
            )
        if f.shape[0] < 2:
            raise ValueError(f"need at least 2 frames, got {f.shape[0]}")
        cam = self.camera
        if (f.shape[1], f.shape[2]) != (cam.height, cam.width):
            raise ValueError(
                f"camera says {cam.height}x{cam.width}, frames are "
                f"{f.shape[1]}x{f.shape[2]}"
            )
        for name, arr in (("gt_frames", self.gt_frames), ("gt_depths", self.gt_depths)):
            if arr is not None and arr.shape[:3] != f.shape[:3]:
                raise ValueError(f"{name} shape {arr.shape} inconsistent with frames")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def frame_time(self, index: int) -> float:
        """Normalized time of a frame; frame i sits at i / T in [0, 1)."""
        if not 0 <= index < self.frame_count:
            raise IndexError(f"frame {index} out of range")
        return index / self.frame_count

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.frame_count) / self.frame_count


def metric_depth_to_ray_depth(
    depth: np.ndarray, camera: Camera
) -> tuple[np.ndarray, np.ndarray]:
    """Convert metric depth maps to the normalized ray parameter s.

    Returns (s, valid): invalid pixels (depth == 0) get s = 0 and valid =
    False; depths outside [near, far] are clamped into range with a single
    warning reporting how many were affected.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = depth > 0
    n_out = int((valid & ((depth < camera.near) | (depth > camera.far))).sum())
    if n_out:
        warnings.warn(
            f"{n_out} depth value(s) outside [{camera.near}, {camera.far}] were clamped"
        )
    z = np.clip(depth, camera.near, camera.far)
    s = np.where(valid, metric_to_s(camera, z), 0.0)
    return s.astype(np.float64), valid


def ray_depth_to_metric(s: np.ndarray, camera: Camera) -> np.ndarray:
    """Inverse of :func:`metric_depth_to_ray_depth` on valid values."""
    return s_to_metric(camera, s)


# ---------------------------------------------------------------------------
# On-disk scene layout


def atomic_write(path: str, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _save_png(path: str, img: Image.Image):
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def save_dataset(dataset: Dataset, path: str, depth_scale: float = 1000.0):
    """Write a scene directory (creates ``path`` if needed)."""
    os.makedirs(path, exist_ok=True)
    cam = dataset.camera
    manifest = {
        "frame_count": dataset.frame_count,
        "fps": dataset.fps,
        "depth_scale": depth_scale,
        "has_ground_truth": dataset.gt_frames is not None,
        "camera": {
            "width": cam.width,
            "height": cam.height,
            "fx": cam.fx,
            "fy": cam.fy,
            "cx": cam.cx,
            "cy": cam.cy,
            "near": cam.near,
            "far": cam.far,
        },
    }
    atomic_write(
        os.path.join(path, "manifest.json"),
        (json.dumps(manifest, indent=2) + "\n").encode(),
    )
    for i in range(dataset.frame_count):
        _save_png(
            os.path.join(path, f"frame_{i:04d}.png"), _to_rgb8(dataset.frames[i])
        )
        _save_png(
            os.path.join(path, f"depth_{i:04d}.png"),
            _to_depth16(dataset.depths[i], depth_scale),
        )
        mask8 = (dataset.masks[i].astype(np.uint8)) * 255
        _save_png(os.path.join(path, f"mask_{i:04d}.png"), Image.fromarray(mask8, "L"))
        if dataset.gt_frames is not None:
            _save_png(
                os.path.join(path, f"gt_frame_{i:04d}.png"),
                _to_rgb8(dataset.gt_frames[i]),
            )
        if dataset.gt_depths is not None:
            _save_png(
                os.path.join(path, f"gt_depth_{i:04d}.png"),
                _to_depth16(dataset.gt_depths[i], depth_scale),
            )


def _to_rgb8(frame: np.ndarray) -> Image.Image:
    arr = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    return Image.fromarray(np.round(arr * 255.0).astype(np.uint8), "RGB")


def _to_depth16(depth: np.ndarray, scale: float) -> Image.Image:
    arr = np.round(np.asarray(depth, dtype=np.float64) * scale)
    return Image.fromarray(np.clip(arr, 0, 65535).astype(np.uint16))


def _load_png(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DatasetError(f"missing file: {path}")
    try:
        with Image.open(path) as img:
            return np.asarray(img)
    except Exception as exc:  # corrupt image
        raise DatasetError(f"unreadable image {path}: {exc}") from exc


def load_dataset(path: str) -> Dataset:
    """Load a scene directory, validating the manifest against the files."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DatasetError(f"missing file: {manifest_path}")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid manifest {manifest_path}: {exc}") from exc
    try:
        count = int(manifest["frame_count"])
        fps = float(manifest["fps"])
        depth_scale = float(manifest["depth_scale"])
        c = manifest["camera"]
        camera = Camera(
            width=int(c["width"]),
            height=int(c["height"]),
            fx=float(c["fx"]),
            fy=float(c["fy"]),
            cx=float(c["cx"]),
            cy=float(c["cy"]),
            near=float(c["near"]),
            far=float(c["far"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"manifest {manifest_path} malformed: {exc}") from exc
    if count < 2:
        raise DatasetError(f"manifest {manifest_path} declares {count} frames (< 2)")

    frames, depths, masks = [], [], []
    gt_frames, gt_depths = [], []
    has_gt = bool(manifest.get("has_ground_truth", False))
    for i in range(count):
        frame = _load_png(os.path.join(path, f"frame_{i:04d}.png"))
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise DatasetError(f"frame_{i:04d}.png is not RGB")
        depth = _load_png(os.path.join(path, f"depth_{i:04d}.png"))
        mask = _load_png(os.path.join(path, f"mask_{i:04d}.png"))
        if depth.shape != frame.shape[:2] or mask.shape != frame.shape[:2]:
            raise DatasetError(
                f"frame {i}: depth {depth.shape} / mask {mask.shape} do not match "
                f"frame {frame.shape[:2]}"
            )
        frames.append(frame.astype(np.float32) / 255.0)
        depths.append(depth.astype(np.float32) / depth_scale)
        masks.append(mask.astype(np.float32) / 255.0 >= 0.5)
        if has_gt:
            gtf = _load_png(os.path.join(path, f"gt_frame_{i:04d}.png"))
            gtd = _load_png(os.path.join(path, f"gt_depth_{i:04d}.png"))
            gt_frames.append(gtf.astype(np.float32) / 255.0)
            gt_depths.append(gtd.astype(np.float32) / depth_scale)

    try:
        return Dataset(
            frames=np.stack(frames),
            depths=np.stack(depths),
            masks=np.stack(masks),
            camera=camera,
            fps=fps,
            gt_frames=np.stack(gt_frames) if has_gt else None,
            gt_depths=np.stack(gt_depths) if has_gt else None,
        )
    except ValueError as exc:
        raise DatasetError(f"inconsistent scene at {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Point clouds

PLY_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
    ]
)


def backproject(ray_depth: np.ndarray, camera: Camera) -> np.ndarray:
    """Lift an (H, W) map of ray-parameter depths to camera-space points.

    Returns (H, W, 3) with the camera looking down -z; x right, y up.
    """
    ray_depth = np.asarray(ray_depth, dtype=np.float64)
    if ray_depth.shape != (camera.height, camera.width):
        raise ValueError(
            f"depth map {ray_depth.shape} does not match camera "
            f"{camera.height}x{camera.width}"
        )
    z = s_to_metric(camera, ray_depth)
    rows, cols = np.meshgrid(
        np.arange(camera.height), np.arange(camera.width), indexing="ij"
    )
    x = (cols - camera.cx) / camera.fx * z
    y = -(rows - camera.cy) / camera.fy * z
    return np.stack([x, y, -z], axis=-1)


def export_pointcloud(
    color: np.ndarray,
    ray_depth: np.ndarray,
    camera: Camera,
    path: str,
    opacity: np.ndarray | None = None,
    opacity_threshold: float = 0.5,
):
    """Write a binary little-endian PLY of the backprojected surface.

    Pixels whose opacity falls below the threshold (empty space / background
    never reached) are dropped when an opacity map is given.
    """
    color = np.asarray(color, dtype=np.float64)
    if color.shape != (camera.height, camera.width, 3):
        raise ValueError(f"color map has shape {color.shape}")
    points = backproject(ray_depth, camera)
    keep = np.ones((camera.height, camera.width), dtype=bool)
    if opacity is not None:
        opacity = np.asarray(opacity, dtype=np.float64)
        if opacity.shape != keep.shape:
            raise ValueError(f"opacity map has shape {opacity.shape}")
        keep = opacity >= opacity_threshold
    pts = points[keep].astype(np.float32)
    rgb = np.round(np.clip(color[keep], 0.0, 1.0) * 255.0).astype(np.uint8)
    vertices = np.empty(pts.shape[0], dtype=PLY_DTYPE)
    vertices["x"], vertices["y"], vertices["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    vertices["red"], vertices["green"], vertices["blue"] = (
        rgb[:, 0],
        rgb[:, 1],
        rgb[:, 2],
    )
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {pts.shape[0]}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    atomic_write(path, header.encode("ascii") + vertices.tobytes())


def read_pointcloud(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read back a PLY written by :func:`export_pointcloud`.

    Returns (points (N, 3) float32, colors (N, 3) uint8).
    """
    with open(path, "rb") as f:
        data = f.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii")
    n = None
    for line in header.splitlines():
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
    if n is None:
        raise ValueError(f"{path}: no vertex element in header")
    vertices = np.frombuffer(data[end:], dtype=PLY_DTYPE, count=n)
    pts = np.stack([vertices["x"], vertices["y"], vertices["z"]], axis=-1)
    rgb = np.stack([vertices["red"], vertices["green"], vertices["blue"]], axis=-1)
    return pts, rgb
