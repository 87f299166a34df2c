"""Losses, optimizer, and the ray-sampled reconstruction training loop."""

from __future__ import annotations

import csv
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .decoder import EncoderConfig, SceneDecoder
from .field import FeaturePlaneSet, PlaneConfig
from .renderer import make_ray_grid, render_rays
from .sampler import (
    DegenerateFrameError,
    SamplerConfig,
    combine_and_normalize,
    draw_rays,
    motion_weight,
    occlusion_importance,
)
from .scene_io import Dataset, metric_depth_to_ray_depth


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite; a diagnostic checkpoint is saved."""


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the loss terms (color is fixed at 1)."""

    depth: float = 1.0
    tv2d: float = 2e-4
    tv1d: float = 1e-4
    smooth: float = 1e-3

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class TrainConfig:
    """Everything the training loop needs besides the dataset itself."""

    iterations: int = 5000
    batch_rays: int = 2048
    n_samples: int = 128
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    workers: int = 1
    jitter: bool = True
    use_isdm: bool = True
    use_depth_loss: bool = True
    holdout_frames: tuple[int, ...] = ()
    hidden_width: int = 64
    hidden_depth: int = 2
    geo_feature_width: int = 15
    log_every: int = 1
    progress_every: int = 0  # 0 = silent; else a stderr line every N iterations
    checkpoint_every: int = 0  # 0 = final checkpoint only
    planes: PlaneConfig = field(default_factory=PlaneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(clamp_mode="max"))
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.holdout_frames = tuple(int(i) for i in self.holdout_frames)


def color_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the squared RGB error norm."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.shape[-1] != 3:
        raise ValueError("color tensors must be (..., 3)")
    return (pred - target).square().sum(dim=-1).mean()


def depth_loss(
    pred: torch.Tensor, target: torch.Tensor, valid: torch.Tensor
) -> torch.Tensor:
    """Mean squared error over rays with a valid depth observation.

    All-invalid batches contribute exactly zero (with a warning) rather than
    NaN, so sparse-depth data cannot poison a step.
    """
    if pred.shape != target.shape or pred.shape != valid.shape:
        raise ValueError(
            f"shape mismatch: pred {tuple(pred.shape)}, target {tuple(target.shape)}, "
            f"valid {tuple(valid.shape)}"
        )
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("depth_loss: no valid depth in batch, contributing 0")
        return torch.zeros((), dtype=pred.dtype)
    diff = (pred - target)[valid]
    return diff.square().mean()


def total_loss(
    color: torch.Tensor,
    depth: torch.Tensor,
    tv2d: torch.Tensor,
    tv1d: torch.Tensor,
    smooth: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    return (
        color
        + weights.depth * depth
        + weights.tv2d * tv2d
        + weights.tv1d * tv1d
        + weights.smooth * smooth
    )


class AdamOptimizer:
    """Adam with bias correction, written out explicitly.

    Non-finite gradients skip their parameter's update for that step (the
    moments are left untouched) and surface a warning naming the parameter
    index, so one bad batch cannot corrupt the whole state.
    """

    def __init__(
        self,
        params,
        learning_rate: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = list(params)
        if not self.params:
            raise ValueError("no parameters to optimize")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            if p.grad is not None:
                p.grad.detach_()
                p.grad.zero_()

    @torch.no_grad()
    def step(self, learning_rate: float | None = None):
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        skipped = []
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not torch.isfinite(g).all():
                skipped.append(i)
                continue
            self.m[i].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            self.v[i].mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            denom = (self.v[i] / correction2).sqrt_().add_(self.epsilon)
            p.addcdiv_(self.m[i], denom, value=-lr / correction1)
        if skipped:
            warnings.warn(
                f"adam: skipped parameters {skipped} with non-finite gradients "
                f"at step {self.step_count}"
            )


@dataclass
class TrainResult:
    planes: FeaturePlaneSet
    decoder: SceneDecoder
    history: list[dict]
    csv_path: str
    checkpoint_path: str
    wall_seconds: float


# The CSV deliberately excludes wall-clock timing so that two runs with the
# same seed produce byte-identical logs; timing lives in the history rows.
CSV_COLUMNS = (
    "iteration",
    "frame",
    "loss_total",
    "loss_color",
    "loss_depth",
    "loss_tv2d",
    "loss_tv1d",
    "loss_smooth",
)


def _format_row(row: dict) -> dict:
    out = {}
    for key in CSV_COLUMNS:
        value = row[key]
        out[key] = f"{value:.10e}" if isinstance(value, float) else value
    return out


def train(dataset: Dataset, config: TrainConfig, out_dir: str) -> TrainResult:
    """Optimize a plane set + decoder against an RGBD video.

    Writes ``train_log.csv`` (one row per logged iteration, atomically
    renamed into place at the end) and ``model.ckpt`` into ``out_dir``.
    Fully deterministic for a given (dataset, config) when ``workers == 1``.
    """
    t_start = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    torch.set_num_threads(max(1, config.workers))

    t_count = dataset.frame_count
    for i in config.holdout_frames:
        if not 0 <= i < t_count:
            raise ValueError(f"holdout frame {i} out of range for {t_count} frames")
    train_frames = [i for i in range(t_count) if i not in set(config.holdout_frames)]
    if not train_frames:
        raise ValueError("holdout set leaves no frames to train on")

    planes = FeaturePlaneSet(config.planes, seed=config.seed)
    decoder = SceneDecoder(
        config.planes.fused_width,
        encoder=config.encoder,
        hidden_width=config.hidden_width,
        hidden_depth=config.hidden_depth,
        geo_feature_width=config.geo_feature_width,
        seed=config.seed + 1,
    )
    params = list(planes.parameters()) + list(decoder.parameters())
    optimizer = AdamOptimizer(
        params,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.adam_epsilon,
    )

    camera = dataset.camera
    h, w = camera.height, camera.width
    if config.use_isdm:
        occ = occlusion_importance(dataset.masks, config.sampler.epsilon)
        pmfs = np.zeros((t_count, h * w))
        degenerate = []
        for i in range(t_count):
            motion = motion_weight(dataset.frames, i, config.sampler)
            try:
                pmfs[i] = combine_and_normalize(occ[i], motion).reshape(-1)
            except DegenerateFrameError:
                degenerate.append(i)
        if degenerate:
            warnings.warn(
                f"skipping fully occluded frame(s) {degenerate}: nothing to sample"
            )
            train_frames = [i for i in train_frames if i not in set(degenerate)]
            if not train_frames:
                raise ValueError("every trainable frame is fully occluded")
    else:
        pmfs = np.full((t_count, h * w), 1.0 / (h * w))

    origins_np, dirs_np = make_ray_grid(camera)
    origins = torch.as_tensor(origins_np, dtype=torch.float32)
    view_dirs = torch.as_tensor(dirs_np, dtype=torch.float32)
    frames_flat = torch.as_tensor(
        dataset.frames.reshape(t_count, h * w, 3), dtype=torch.float32
    )
    s_target_np, valid_np = metric_depth_to_ray_depth(dataset.depths, camera)
    s_targets = torch.as_tensor(s_target_np.reshape(t_count, h * w), dtype=torch.float32)
    valids = torch.as_tensor(valid_np.reshape(t_count, h * w))
    s_far = 1.0

    csv_path = os.path.join(out_dir, "train_log.csv")
    csv_tmp = csv_path + ".tmp"
    checkpoint_path = os.path.join(out_dir, "model.ckpt")
    meta = {
        "train_config": config_to_dict(config),
        "frame_count": t_count,
        "fps": dataset.fps,
        "camera": {
            "width": camera.width,
            "height": camera.height,
            "fx": camera.fx,
            "fy": camera.fy,
            "cx": camera.cx,
            "cy": camera.cy,
            "near": camera.near,
            "far": camera.far,
        },
    }

    history: list[dict] = []
    it_prev = t_start
    with open(csv_tmp, "w", newline="") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for it in range(config.iterations):
            rng = np.random.default_rng([config.seed, it])
            frame = train_frames[int(rng.integers(len(train_frames)))]
            idx = torch.as_tensor(draw_rays(pmfs[frame], config.batch_rays, rng))
            t_value = frame / t_count

            out = render_rays(
                planes,
                decoder,
                origins[idx],
                view_dirs[idx],
                torch.full((config.batch_rays,), t_value, dtype=torch.float32),
                config.n_samples,
                s_far,
                rng=rng,
                jitter=config.jitter,
            )
            l_color = color_loss(out.color, frames_flat[frame][idx])
            if config.use_depth_loss:
                l_depth = depth_loss(out.depth, s_targets[frame][idx], valids[frame][idx])
            else:
                l_depth = torch.zeros(())
            l_tv2d, l_tv1d, l_smooth = planes.regularizer_losses()
            loss = total_loss(l_color, l_depth, l_tv2d, l_tv1d, l_smooth, config.weights)

            if not torch.isfinite(loss):
                save_checkpoint(
                    os.path.join(out_dir, "diagnostic.ckpt"), planes, decoder, meta
                )
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {it}: color={l_color.item()!r} "
                    f"depth={l_depth.item()!r} tv2d={l_tv2d.item()!r} "
                    f"tv1d={l_tv1d.item()!r} smooth={l_smooth.item()!r}"
                )

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            now = time.perf_counter()
            if config.log_every and (it % config.log_every == 0 or it == config.iterations - 1):
                row = {
                    "iteration": it,
                    "frame": frame,
                    "loss_total": loss.item(),
                    "loss_color": l_color.item(),
                    "loss_depth": l_depth.item(),
                    "loss_tv2d": l_tv2d.item(),
                    "loss_tv1d": l_tv1d.item(),
                    "loss_smooth": l_smooth.item(),
                    "wall_ms": (now - it_prev) * 1000.0,
                }
                history.append(row)
                writer.writerow(_format_row(row))
            if config.progress_every and (
                (it + 1) % config.progress_every == 0 or it == config.iterations - 1
            ):
                print(
                    f"[train] iteration {it + 1}/{config.iterations} "
                    f"loss={loss.item():.5f} color={l_color.item():.5f} "
                    f"depth={l_depth.item():.5f}",
                    file=sys.stderr,
                )
            it_prev = now

            if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                save_checkpoint(
                    os.path.join(out_dir, f"model_{it + 1:06d}.ckpt"),
                    planes,
                    decoder,
                    meta,
                )
    os.replace(csv_tmp, csv_path)
    save_checkpoint(checkpoint_path, planes, decoder, meta)
    return TrainResult(
        planes=planes,
        decoder=decoder,
        history=history,
        csv_path=csv_path,
        checkpoint_path=checkpoint_path,
        wall_seconds=time.perf_counter() - t_start,
    )


# ---------------------------------------------------------------------------
# Config (de)serialization, shared by the CLI and checkpoints.


def config_to_dict(config: TrainConfig) -> dict:
    doc = asdict(config)
    doc["holdout_frames"] = list(config.holdout_frames)
    doc["planes"]["scales"] = list(config.planes.scales)
    if config.planes.time_resolutions is not None:
        doc["planes"]["time_resolutions"] = list(config.planes.time_resolutions)
    return doc


def config_from_dict(doc: dict) -> TrainConfig:
    doc = dict(doc)
    known = {
        "planes": (PlaneConfig, {"scales", "time_resolutions"}),
        "encoder": (EncoderConfig, set()),
        "sampler": (SamplerConfig, set()),
        "weights": (LossWeights, set()),
    }
    kwargs = {}
    for key, value in doc.items():
        if key in known:
            cls, tuple_fields = known[key]
            sub = dict(value)
            for f in tuple_fields:
                if sub.get(f) is not None:
                    sub[f] = tuple(sub[f])
            kwargs[key] = cls(**sub)
        elif key == "holdout_frames":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad training config: {exc}") from exc
