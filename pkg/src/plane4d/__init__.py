"""Dynamic-scene reconstruction from stationary-camera RGBD video.

The scene is factorized into six learnable feature planes (three spatial,
three space-time), decoded by small MLPs into density and color, and
rendered by emission-absorption volume rendering along axis-aligned rays in
a normalized device cube.  Training draws rays with occlusion- and
motion-aware importance sampling and supervises both color and depth.
"""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .decoder import EncoderConfig, SceneDecoder, init_decoder, posenc
from .field import (
    PLANE_NAMES,
    FeaturePlaneSet,
    PlaneConfig,
    bilerp,
    init_planes,
    smooth_time,
    tv1d_space,
    tv2d,
)
from .gradcheck import check_component, run_gradient_suite
from .metrics import psnr, ssim
from .renderer import (
    Camera,
    Ray,
    RenderResult,
    SamplePrediction,
    composite,
    make_ray,
    render_frame,
    render_ray,
    render_rays,
    stratified_samples,
)
from .sampler import (
    DegenerateFrameError,
    ImportanceMaps,
    SamplerConfig,
    build_importance_maps,
    combine_and_normalize,
    draw_rays,
    motion_weight,
    occlusion_importance,
)
from .scene_io import (
    Dataset,
    DatasetError,
    export_pointcloud,
    load_dataset,
    metric_depth_to_ray_depth,
    ray_depth_to_metric,
    read_pointcloud,
    save_dataset,
)
from .synth import SynthSceneSpec, generate_synthetic
from .training import (
    AdamOptimizer,
    LossWeights,
    TrainConfig,
    TrainResult,
    TrainingDivergedError,
    color_loss,
    depth_loss,
    total_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamOptimizer",
    "Camera",
    "CheckpointError",
    "Dataset",
    "DatasetError",
    "DegenerateFrameError",
    "EncoderConfig",
    "FeaturePlaneSet",
    "ImportanceMaps",
    "LossWeights",
    "PLANE_NAMES",
    "PlaneConfig",
    "Ray",
    "RenderResult",
    "SamplePrediction",
    "SamplerConfig",
    "SceneDecoder",
    "SynthSceneSpec",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "bilerp",
    "build_importance_maps",
    "check_component",
    "color_loss",
    "combine_and_normalize",
    "composite",
    "depth_loss",
    "draw_rays",
    "export_pointcloud",
    "generate_synthetic",
    "init_decoder",
    "init_planes",
    "load_checkpoint",
    "load_dataset",
    "make_ray",
    "metric_depth_to_ray_depth",
    "motion_weight",
    "occlusion_importance",
    "posenc",
    "psnr",
    "ray_depth_to_metric",
    "read_pointcloud",
    "render_frame",
    "render_ray",
    "render_rays",
    "run_gradient_suite",
    "save_checkpoint",
    "save_dataset",
    "smooth_time",
    "ssim",
    "stratified_samples",
    "total_loss",
    "train",
    "tv1d_space",
    "tv2d",
]
