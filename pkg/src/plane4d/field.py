"""Factorized 4D feature volume stored as six 2D feature planes.

The scene is split into a static part, covered by the three spatial planes
(xy, xz, yz), and a dynamic part covered by the three space-time planes
(xt, yt, zt).  A point (x, y, z, t) in the unit 4-cube is featurized by
bilinearly sampling all six planes and taking the elementwise product; with
multiple resolution scales the per-scale products are concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

# Canonical plane order.  Checkpoints and parameter lists follow it.
PLANE_NAMES = ("xy", "xz", "yz", "xt", "yt", "zt")

# Which components of (x, y, z, t) each plane indexes, as (axis0, axis1).
# Space-time planes always put the spatial component on axis 0.
PLANE_AXES = {
    "xy": (0, 1),
    "xz": (0, 2),
    "yz": (1, 2),
    "xt": (0, 3),
    "yt": (1, 3),
    "zt": (2, 3),
}

SPACE_PLANES = ("xy", "xz", "yz")
TIME_PLANES = ("xt", "yt", "zt")


@dataclass(frozen=True)
class PlaneConfig:
    """Resolutions and channel width of the plane pyramid.

    ``scales`` gives the square spatial resolution per pyramid level; the
    time axis of the space-time planes defaults to the same resolution and
    can be overridden with ``time_resolutions`` (same length as ``scales``).
    """

    scales: tuple[int, ...] = (64, 128, 256, 512)
    feature_width: int = 32
    time_resolutions: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.scales) == 0:
            raise ValueError("PlaneConfig.scales must be non-empty")
        if any(int(n) < 2 for n in self.scales):
            raise ValueError(f"plane resolutions must be >= 2, got {self.scales}")
        if self.feature_width < 1:
            raise ValueError(f"feature_width must be >= 1, got {self.feature_width}")
        if self.time_resolutions is not None:
            if len(self.time_resolutions) != len(self.scales):
                raise ValueError(
                    "time_resolutions must match scales in length "
                    f"({len(self.time_resolutions)} vs {len(self.scales)})"
                )
            if any(int(n) < 2 for n in self.time_resolutions):
                raise ValueError(
                    f"time resolutions must be >= 2, got {self.time_resolutions}"
                )
        # Normalize to plain int tuples so configs hash/compare predictably.
        object.__setattr__(self, "scales", tuple(int(n) for n in self.scales))
        if self.time_resolutions is not None:
            object.__setattr__(
                self, "time_resolutions", tuple(int(n) for n in self.time_resolutions)
            )

    @property
    def time_scales(self) -> tuple[int, ...]:
        return self.time_resolutions if self.time_resolutions is not None else self.scales

    @property
    def num_scales(self) -> int:
        return len(self.scales)

    @property
    def fused_width(self) -> int:
        """Width of the fused feature fed to the decoder."""
        return self.feature_width * len(self.scales)


def bilerp(plane: torch.Tensor, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample a feature plane at normalized coordinates.

    ``plane`` is (N_u, N_v, C) with node i of an axis sitting at i / (N - 1);
    ``u`` indexes axis 0 and ``v`` axis 1, both in [0, 1] (out-of-range values
    clamp to the edge).  Returns features of shape ``u.shape + (C,)``.
    """
    if plane.ndim != 3:
        raise ValueError(f"plane must be (N_u, N_v, C), got shape {tuple(plane.shape)}")
    u = torch.as_tensor(u, dtype=plane.dtype, device=plane.device)
    v = torch.as_tensor(v, dtype=plane.dtype, device=plane.device)
    u, v = torch.broadcast_tensors(u, v)
    if not (torch.isfinite(u).all() and torch.isfinite(v).all()):
        raise ValueError("bilerp coordinates must be finite")
    out_shape = u.shape + (plane.shape[-1],)
    grid = _plane_grid(u.reshape(-1), v.reshape(-1))
    inp = plane.permute(2, 0, 1).unsqueeze(0)  # (1, C, N_u, N_v)
    sampled = F.grid_sample(
        inp, grid, mode="bilinear", padding_mode="border", align_corners=True
    )  # (1, C, P, 1)
    return sampled[0, :, :, 0].transpose(0, 1).reshape(out_shape)


def _plane_grid(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Pack clamped (u, v) into a grid_sample grid of shape (1, P, 1, 2).

    grid_sample's last dim is (x, y) = (axis-1 coordinate, axis-0 coordinate)
    in [-1, 1] with align_corners=True, so u maps to y and v to x.
    """
    u = u.clamp(0.0, 1.0) * 2.0 - 1.0
    v = v.clamp(0.0, 1.0) * 2.0 - 1.0
    return torch.stack([v, u], dim=-1).view(1, -1, 1, 2)


def _grouped_bilerp(planes: list[torch.Tensor], us: torch.Tensor, vs: torch.Tensor) -> torch.Tensor:
    """Sample B same-shape planes at B coordinate sets in one grid_sample call.

    ``planes`` is a list of B (N_u, N_v, C) tensors, ``us``/``vs`` are (B, P).
    Returns (B, P, C).
    """
    inp = torch.stack([p.permute(2, 0, 1) for p in planes])  # (B, C, N_u, N_v)
    u = us.clamp(0.0, 1.0) * 2.0 - 1.0
    v = vs.clamp(0.0, 1.0) * 2.0 - 1.0
    grid = torch.stack([v, u], dim=-1).unsqueeze(2)  # (B, P, 1, 2)
    out = F.grid_sample(
        inp, grid, mode="bilinear", padding_mode="border", align_corners=True
    )  # (B, C, P, 1)
    return out[..., 0].transpose(1, 2)


class FeaturePlaneSet(nn.Module):
    """Learnable multi-scale six-plane factorization of a dynamic volume.

    Plane parameters are stored scale-major in canonical order
    (xy, xz, yz, xt, yt, zt), each as an (N_u, N_v, C) tensor.  Spatial planes
    initialize uniformly in [-0.1, 0.1]; space-time planes initialize to ones
    so the model starts out static and motion is learned as a deviation.
    """

    def __init__(self, config: PlaneConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        params = []
        for n_space, n_time in zip(config.scales, config.time_scales):
            for name in PLANE_NAMES:
                if name in SPACE_PLANES:
                    arr = rng.uniform(-0.1, 0.1, size=(n_space, n_space, config.feature_width))
                else:
                    arr = np.ones((n_space, n_time, config.feature_width))
                params.append(nn.Parameter(torch.as_tensor(arr, dtype=dtype)))
        self.planes = nn.ParameterList(params)

    @property
    def fused_width(self) -> int:
        return self.config.fused_width

    def plane(self, scale_idx: int, name: str) -> nn.Parameter:
        if name not in PLANE_NAMES:
            raise KeyError(f"unknown plane {name!r}")
        if not 0 <= scale_idx < self.config.num_scales:
            raise IndexError(f"scale index {scale_idx} out of range")
        return self.planes[scale_idx * len(PLANE_NAMES) + PLANE_NAMES.index(name)]

    def query_fused(self, points: torch.Tensor) -> torch.Tensor:
        """Fuse plane features at (..., 4) points in the unit 4-cube.

        Per scale, the six bilinear samples are multiplied elementwise; the
        per-scale features are then concatenated, giving
        (..., feature_width * num_scales).  Coordinates clamp to [0, 1], but
        points meaningfully outside the cube are rejected.
        """
        points = torch.as_tensor(points)
        if points.ndim < 1 or points.shape[-1] != 4:
            raise ValueError(f"points must be (..., 4), got shape {tuple(points.shape)}")
        if not torch.isfinite(points).all():
            raise ValueError("query points must be finite")
        if bool((points < -1e-6).any()) or bool((points > 1.0 + 1e-6).any()):
            raise ValueError("query points must lie in the unit 4-cube")
        lead_shape = points.shape[:-1]
        pts = points.reshape(-1, 4).to(self.planes[0].dtype)

        space_u = torch.stack([pts[:, PLANE_AXES[n][0]] for n in SPACE_PLANES])
        space_v = torch.stack([pts[:, PLANE_AXES[n][1]] for n in SPACE_PLANES])
        time_u = torch.stack([pts[:, PLANE_AXES[n][0]] for n in TIME_PLANES])
        time_v = torch.stack([pts[:, PLANE_AXES[n][1]] for n in TIME_PLANES])

        per_scale = []
        for si in range(self.config.num_scales):
            space = _grouped_bilerp(
                [self.plane(si, n) for n in SPACE_PLANES], space_u, space_v
            )
            timed = _grouped_bilerp(
                [self.plane(si, n) for n in TIME_PLANES], time_u, time_v
            )
            fused = space[0] * space[1] * space[2] * timed[0] * timed[1] * timed[2]
            per_scale.append(fused)
        out = torch.cat(per_scale, dim=-1)
        return out.reshape(lead_shape + (self.fused_width,))

    def query_fused_rays(self, ray_xyt: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        """Fused features along axis-aligned rays, (R, K, fused_width).

        ``ray_xyt`` is (R, 3) holding (x01, y01, t) per ray and ``s`` is
        (R, K) sample positions along z.  Equivalent (up to rounding) to
        assembling (R, K, 4) points for :meth:`query_fused`, but the three
        planes that are constant along such a ray (xy, xt, yt) are sampled
        once per ray rather than once per sample, which roughly halves the
        cost of training batches.
        """
        ray_xyt = torch.as_tensor(ray_xyt)
        s = torch.as_tensor(s)
        if ray_xyt.ndim != 2 or ray_xyt.shape[-1] != 3:
            raise ValueError(f"ray_xyt must be (R, 3), got {tuple(ray_xyt.shape)}")
        if s.ndim != 2 or s.shape[0] != ray_xyt.shape[0]:
            raise ValueError(
                f"s must be (R, K) with R={ray_xyt.shape[0]}, got {tuple(s.shape)}"
            )
        for name, tensor in (("ray_xyt", ray_xyt), ("s", s)):
            if not torch.isfinite(tensor).all():
                raise ValueError(f"{name} must be finite")
            if bool((tensor < -1e-6).any()) or bool((tensor > 1.0 + 1e-6).any()):
                raise ValueError(f"{name} must lie in [0, 1]")
        dtype = self.planes[0].dtype
        ray_xyt = ray_xyt.to(dtype)
        s = s.to(dtype)
        n_rays, n_samples = s.shape
        x, y, t = ray_xyt[:, 0], ray_xyt[:, 1], ray_xyt[:, 2]
        ray_u = torch.stack([x, x, y])  # xy, xt, yt
        ray_v = torch.stack([y, t, t])
        s_flat = s.reshape(-1)
        x_b = x[:, None].expand(n_rays, n_samples).reshape(-1)
        y_b = y[:, None].expand(n_rays, n_samples).reshape(-1)
        t_b = t[:, None].expand(n_rays, n_samples).reshape(-1)
        samp_u = torch.stack([x_b, y_b, s_flat])  # xz, yz, zt
        samp_v = torch.stack([s_flat, s_flat, t_b])
        per_scale = []
        for si in range(self.config.num_scales):
            if self.config.scales[si] == self.config.time_scales[si]:
                ray_feats = _grouped_bilerp(
                    [self.plane(si, n) for n in ("xy", "xt", "yt")], ray_u, ray_v
                )
                samp_feats = _grouped_bilerp(
                    [self.plane(si, n) for n in ("xz", "yz", "zt")], samp_u, samp_v
                )
                ray_prod = ray_feats[0] * ray_feats[1] * ray_feats[2]
                samp_prod = samp_feats[0] * samp_feats[1] * samp_feats[2]
            else:
                # A non-square time axis breaks the mixed grouping above, so
                # sample the square and rectangular planes separately.
                time_feats = _grouped_bilerp(
                    [self.plane(si, n) for n in ("xt", "yt")],
                    ray_u[1:], ray_v[1:],
                )
                ray_prod = (
                    bilerp(self.plane(si, "xy"), x, y) * time_feats[0] * time_feats[1]
                )
                space_feats = _grouped_bilerp(
                    [self.plane(si, n) for n in ("xz", "yz")],
                    samp_u[:2], samp_v[:2],
                )
                samp_prod = (
                    space_feats[0]
                    * space_feats[1]
                    * bilerp(self.plane(si, "zt"), s_flat, t_b)
                )
            per_scale.append(
                ray_prod[:, None, :] * samp_prod.reshape(n_rays, n_samples, -1)
            )
        return torch.cat(per_scale, dim=-1)

    def regularizer_losses(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Mean spatial TV, time-plane spatial TV, and temporal smoothness.

        Each term is averaged over the planes (and scales) it applies to, so
        loss weights don't need retuning when the pyramid depth changes.
        """
        tv_space = []
        tv_time_space = []
        smooth = []
        for si in range(self.config.num_scales):
            for name in SPACE_PLANES:
                tv_space.append(tv2d(self.plane(si, name)))
            for name in TIME_PLANES:
                p = self.plane(si, name)
                tv_time_space.append(tv1d_space(p))
                smooth.append(smooth_time(p))
        stack = lambda xs: torch.stack(xs).mean()
        return stack(tv_space), stack(tv_time_space), stack(smooth)


def init_planes(config: PlaneConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> FeaturePlaneSet:
    return FeaturePlaneSet(config, seed=seed, dtype=dtype)


def tv2d(plane: torch.Tensor) -> torch.Tensor:
    """Mean squared forward difference along both plane axes."""
    if plane.ndim != 3:
        raise ValueError(f"expected (N_u, N_v, C) plane, got shape {tuple(plane.shape)}")
    du = plane[1:, :, :] - plane[:-1, :, :]
    dv = plane[:, 1:, :] - plane[:, :-1, :]
    total = du.square().sum() + dv.square().sum()
    return total / (du.numel() + dv.numel())


def tv1d_space(plane: torch.Tensor) -> torch.Tensor:
    """Mean squared forward difference along the spatial axis (axis 0) only.

    Space-time planes keep space on axis 0, so this leaves the time axis free
    to move (temporal regularity is handled by :func:`smooth_time`).
    """
    if plane.ndim != 3:
        raise ValueError(f"expected (N_u, N_v, C) plane, got shape {tuple(plane.shape)}")
    du = plane[1:, :, :] - plane[:-1, :, :]
    return du.square().mean()


def smooth_time(plane: torch.Tensor) -> torch.Tensor:
    """Mean squared second difference along the time axis (axis 1).

    Zero for any feature that is constant or linear in time, so it penalizes
    acceleration of the dynamic features rather than motion itself.
    """
    if plane.ndim != 3:
        raise ValueError(f"expected (N_space, N_time, C) plane, got shape {tuple(plane.shape)}")
    if plane.shape[1] < 3:
        raise ValueError(
            f"smooth_time needs a time axis of at least 3 nodes, got {plane.shape[1]}"
        )
    d2 = plane[:, 2:, :] - 2.0 * plane[:, 1:-1, :] + plane[:, :-2, :]
    return d2.square().mean()
