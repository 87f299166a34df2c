"""Command-line interface.

Subcommands::

    synth              generate the procedural test scene
    train              optimize a model against a scene directory
    render             render frames from a trained checkpoint
    eval               per-frame quality metrics against ground truth
    export-pointcloud  write a colored PLY of the reconstructed surface
    grad-check         verify analytic gradients against finite differences

Exit codes: 0 success, 1 runtime failure (bad data, diverged training),
2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import training as training_mod
from .checkpoint import CheckpointError, load_checkpoint
from .gradcheck import DEFAULT_SEEDS, component_tolerance, run_gradient_suite
from .metrics import psnr, ssim
from .renderer import Camera, render_frame
from .sampler import DegenerateFrameError
from .scene_io import (
    Dataset,
    DatasetError,
    atomic_write,
    export_pointcloud,
    load_dataset,
    metric_depth_to_ray_depth,
    save_dataset,
)
from .synth import SynthSceneSpec, generate_synthetic
from .training import TrainConfig, TrainingDivergedError, config_from_dict, config_to_dict

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class CliError(Exception):
    """Usage-level problem detected after argparse (bad config, bad values)."""


def load_train_config(path: str | None) -> TrainConfig:
    """Default config, optionally updated from a TOML file.

    Sections: [train] for loop/optimizer scalars, [decoder] for MLP sizes,
    and [planes], [encoder], [sampler], [weights] for the sub-configs.
    """
    base = config_to_dict(TrainConfig())
    if path is None:
        return config_from_dict(base)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"invalid TOML in {path}: {exc}") from exc
    known = {"train", "decoder", "planes", "encoder", "sampler", "weights"}
    unknown = set(doc) - known
    if unknown:
        raise CliError(f"unknown config sections {sorted(unknown)}; expected {sorted(known)}")
    for section in ("train", "decoder"):
        for key, value in doc.get(section, {}).items():
            base[key] = value
    for section in ("planes", "encoder", "sampler", "weights"):
        if section in doc:
            base[section].update(doc[section])
    try:
        return config_from_dict(base)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad config {path}: {exc}") from exc


def _apply_train_flags(config: TrainConfig, args) -> TrainConfig:
    from dataclasses import replace

    if args.iterations is not None:
        config.iterations = args.iterations
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.batch_rays is not None:
        config.batch_rays = args.batch_rays
    if args.samples is not None:
        config.n_samples = args.samples
    if args.holdout is not None:
        config.holdout_frames = tuple(args.holdout)
    if args.clamp_mode is not None:
        config.sampler = replace(config.sampler, clamp_mode=args.clamp_mode)
    if args.no_isdm:
        config.use_isdm = False
    if args.no_depth_loss:
        config.use_depth_loss = False
    if args.single_scale:
        scales = config.planes.scales[:1]
        times = (
            config.planes.time_resolutions[:1]
            if config.planes.time_resolutions is not None
            else None
        )
        config.planes = replace(config.planes, scales=scales, time_resolutions=times)
    # Re-validate after the mutations.
    return config_from_dict(config_to_dict(config))


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plane4d",
        description="Dynamic-scene reconstruction from stationary-camera RGBD video.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the procedural test scene")
    p.add_argument("--out-dir", required=True, help="scene directory to create")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--no-occluder", action="store_true", help="omit the sweeping bar")

    p = sub.add_parser("train", help="optimize a model against a scene")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--out-dir", required=True, help="where to write logs and checkpoints")
    p.add_argument("--config", help="TOML training configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="compute thread cap (1 = bit-deterministic)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-rays", type=int)
    p.add_argument("--samples", type=int, help="samples per ray")
    p.add_argument("--holdout", type=_parse_int_list, help="comma-separated frames to hold out")
    p.add_argument("--clamp-mode", choices=("min", "max"), help="motion-weight clamp direction")
    p.add_argument("--no-isdm", action="store_true", help="uniform ray sampling over all pixels")
    p.add_argument("--no-depth-loss", action="store_true")
    p.add_argument("--single-scale", action="store_true", help="keep only the coarsest plane scale")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p = sub.add_parser("render", help="render frames from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--data", help="scene directory (fallback for camera metadata)")
    p.add_argument("--frames", help="comma-separated frame indices (default: all)")
    p.add_argument("--samples", type=int, help="samples per ray (default: training value)")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="quality metrics for a checkpoint against a scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--frames", help="comma-separated frame indices (default: all)")
    p.add_argument("--samples", type=int)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("export-pointcloud", help="write a colored PLY point cloud")
    p.add_argument("--out", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--checkpoint", help="export the trained reconstruction")
    p.add_argument("--data", help="export a stored scene frame instead")
    p.add_argument("--use-gt", action="store_true", help="with --data: use the clean ground truth")
    p.add_argument("--threshold", type=float, default=0.5, help="minimum opacity to keep a point")
    p.add_argument("--samples", type=int)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("grad-check", help="compare analytic gradients to finite differences")
    p.add_argument("--seeds", type=int, default=len(DEFAULT_SEEDS), help="number of seeds")
    p.add_argument("--components", help="comma-separated subset to check")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (
        DatasetError,
        CheckpointError,
        TrainingDivergedError,
        DegenerateFrameError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


def cmd_synth(args) -> int:
    try:
        spec = SynthSceneSpec(
            width=args.width,
            height=args.height,
            frame_count=args.frames,
            occluder=not args.no_occluder,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    dataset = generate_synthetic(spec, seed=args.seed)
    save_dataset(dataset, args.out_dir)
    print(f"wrote {dataset.frame_count} frames to {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    config = load_train_config(args.config)
    try:
        config = _apply_train_flags(config, args)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if not args.quiet and config.progress_every == 0:
        config.progress_every = max(1, config.iterations // 20)
    dataset = load_dataset(args.data)
    result = training_mod.train(dataset, config, args.out_dir)
    print(
        f"trained {config.iterations} iterations in {result.wall_seconds:.1f}s; "
        f"final loss {result.history[-1]['loss_total']:.5f}"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.csv_path}")
    return 0


def _load_model(args, need_dataset: bool = False):
    """Load (planes, decoder, camera, frame_count, samples, dataset?)."""
    planes, decoder, meta = load_checkpoint(args.checkpoint)
    dataset = None
    data_path = getattr(args, "data", None)
    if data_path or need_dataset:
        if not data_path:
            raise CliError("this command needs --data")
        dataset = load_dataset(data_path)
    if meta.get("camera"):
        c = meta["camera"]
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
        frame_count = int(meta.get("frame_count") or 0)
    elif dataset is not None:
        camera, frame_count = dataset.camera, dataset.frame_count
    else:
        raise CliError(
            f"{args.checkpoint} carries no camera metadata; pass --data as well"
        )
    if dataset is not None and frame_count and dataset.frame_count != frame_count:
        raise CliError(
            f"checkpoint was trained on {frame_count} frames but {data_path} "
            f"has {dataset.frame_count}"
        )
    samples = args.samples
    if samples is None:
        samples = int(meta.get("train_config", {}).get("n_samples", 128))
    return planes, decoder, camera, frame_count, samples, dataset


def _frame_indices(arg: str | None, frame_count: int) -> list[int]:
    if frame_count < 1:
        raise CliError("frame count unknown; pass --data")
    if arg is None:
        return list(range(frame_count))
    indices = _parse_int_list(arg)
    for i in indices:
        if not 0 <= i < frame_count:
            raise CliError(f"frame {i} out of range [0, {frame_count})")
    return indices


def cmd_render(args) -> int:
    import torch

    from .scene_io import _save_png, _to_depth16, _to_rgb8
    from .renderer import s_to_metric

    torch.set_num_threads(max(1, args.workers))
    planes, decoder, camera, frame_count, samples, dataset = _load_model(args)
    if not frame_count and dataset is not None:
        frame_count = dataset.frame_count
    indices = _frame_indices(args.frames, frame_count)
    os.makedirs(args.out_dir, exist_ok=True)
    for i in indices:
        color, depth_s, opacity = render_frame(
            planes, decoder, camera, i / frame_count, samples
        )
        _save_png(os.path.join(args.out_dir, f"frame_{i:04d}.png"), _to_rgb8(color))
        depth_metric = s_to_metric(camera, depth_s)
        _save_png(
            os.path.join(args.out_dir, f"depth_{i:04d}.png"),
            _to_depth16(depth_metric, 1000.0),
        )
        _save_png(
            os.path.join(args.out_dir, f"opacity_{i:04d}.png"),
            _to_rgb8(np.repeat(opacity[..., None], 3, axis=-1)),
        )
        print(f"rendered frame {i} -> {args.out_dir}")
    return 0


def cmd_eval(args) -> int:
    import torch

    torch.set_num_threads(max(1, args.workers))
    planes, decoder, camera, frame_count, samples, dataset = _load_model(
        args, need_dataset=True
    )
    assert dataset is not None
    if not frame_count:
        frame_count = dataset.frame_count
    indices = _frame_indices(args.frames, frame_count)
    reference = dataset.gt_frames if dataset.gt_frames is not None else dataset.frames
    ref_depth_s = None
    if dataset.gt_depths is not None:
        ref_depth_s, _ = metric_depth_to_ray_depth(dataset.gt_depths, camera)

    rows = []
    for i in indices:
        color, depth_s, _ = render_frame(planes, decoder, camera, i / frame_count, samples)
        color = np.clip(color, 0.0, 1.0)
        row = {
            "frame": i,
            "psnr": psnr(color, reference[i]),
            "ssim": ssim(color, reference[i]),
            "psnr_occluded": "",
            "psnr_occluded_input": "",
            "depth_mae_ndc": "",
        }
        occluded = ~dataset.masks[i]
        if occluded.any() and dataset.gt_frames is not None:
            row["psnr_occluded"] = psnr(color[occluded], reference[i][occluded])
            row["psnr_occluded_input"] = psnr(
                dataset.frames[i][occluded], reference[i][occluded]
            )
        if ref_depth_s is not None:
            row["depth_mae_ndc"] = float(np.abs(depth_s - ref_depth_s[i]).mean())
        rows.append(row)
        print(
            f"frame {i}: psnr={row['psnr']:.2f} ssim={row['ssim']:.4f}"
            + (
                f" psnr_occluded={row['psnr_occluded']:.2f}"
                if row["psnr_occluded"] != ""
                else ""
            )
        )

    fields = ["frame", "psnr", "ssim", "psnr_occluded", "psnr_occluded_input", "depth_mae_ndc"]
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for row in rows:
        writer.writerow(
            {k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()}
        )
    atomic_write(args.out, buf.getvalue().encode())
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    print(f"mean psnr over {len(rows)} frame(s): {mean_psnr:.2f} dB")
    print(f"wrote {args.out}")
    return 0


def cmd_export_pointcloud(args) -> int:
    import torch

    torch.set_num_threads(max(1, args.workers))
    if bool(args.checkpoint) == bool(args.data):
        raise CliError("pass exactly one of --checkpoint or --data")
    if args.checkpoint:
        planes, decoder, camera, frame_count, samples, _ = _load_model(args)
        if not 0 <= args.frame < frame_count:
            raise CliError(f"frame {args.frame} out of range [0, {frame_count})")
        color, depth_s, opacity = render_frame(
            planes, decoder, camera, args.frame / frame_count, samples
        )
        export_pointcloud(
            np.clip(color, 0.0, 1.0),
            depth_s,
            camera,
            args.out,
            opacity=opacity,
            opacity_threshold=args.threshold,
        )
    else:
        dataset = load_dataset(args.data)
        if not 0 <= args.frame < dataset.frame_count:
            raise CliError(f"frame {args.frame} out of range [0, {dataset.frame_count})")
        if args.use_gt:
            if dataset.gt_frames is None:
                raise CliError(f"{args.data} has no ground-truth layers")
            color, depth = dataset.gt_frames[args.frame], dataset.gt_depths[args.frame]
        else:
            color, depth = dataset.frames[args.frame], dataset.depths[args.frame]
        depth_s, valid = metric_depth_to_ray_depth(depth, dataset.camera)
        export_pointcloud(
            color,
            depth_s,
            dataset.camera,
            args.out,
            opacity=valid.astype(np.float64),
            opacity_threshold=0.5,
        )
    print(f"wrote {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    components = args.components.split(",") if args.components else None
    seeds = tuple(range(args.seeds))
    try:
        results = run_gradient_suite(seeds=seeds, components=components)
    except KeyError as exc:
        raise CliError(str(exc)) from exc
    failed = []
    for name, info in sorted(results.items()):
        tol = component_tolerance(name)
        status = "ok" if info["max_error"] < tol else "FAIL"
        if status == "FAIL":
            failed.append(name)
        print(
            f"{name:<16} max_rel_err={info['max_error']:.3e} tol={tol:.0e} "
            f"({info['seconds']:.2f}s over {len(seeds)} seeds) {status}"
        )
    if failed:
        print(f"error: gradient check failed for {failed}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "export-pointcloud": cmd_export_pointcloud,
    "grad-check": cmd_grad_check,
}


if __name__ == "__main__":
    sys.exit(main())
