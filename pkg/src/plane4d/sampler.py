"""Occlusion- and motion-aware importance sampling of training rays.

Pixels that are visible in only a few frames get their sampling mass
concentrated in those frames (mass inversely proportional to visible count),
and within a frame mass is steered toward pixels whose color changes inside
a temporal window.  The product of the two maps, normalized per frame, is
the PMF rays are drawn from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateFrameError(ValueError):
    """Raised when a frame has no visible pixel to sample from."""


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for the ray-importance maps.

    ``alpha`` clamps the motion weight: mode "min" caps it from above
    (min(diff, alpha)), mode "max" floors it from below (max(diff, alpha)) so
    static regions keep nonzero mass.  ``tau`` is the half-width of the
    temporal window in frames, scanned every ``window_stride`` frames.
    """

    alpha: float = 0.1
    tau: int = 25
    epsilon: float = 1e-6
    clamp_mode: str = "min"
    window_stride: int = 5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.clamp_mode not in ("min", "max"):
            raise ValueError(f"clamp_mode must be 'min' or 'max', got {self.clamp_mode!r}")
        if self.window_stride < 1:
            raise ValueError(f"window_stride must be >= 1, got {self.window_stride}")


def occlusion_importance(masks: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """Per-frame pixel importance from visibility masks, shape (T, H, W).

    ``masks`` holds 1 where the scene is visible and 0 where an occluder
    covers it.  Each pixel's unit of mass is split across the frames where it
    is visible: importance = mask * T / (visible_count + epsilon), so rarely
    seen pixels are sampled much more aggressively when they do appear.
    """
    masks = np.asarray(masks)
    if masks.ndim != 3:
        raise ValueError(f"masks must be (T, H, W), got shape {masks.shape}")
    m = masks.astype(np.float64)
    if not np.isin(m, (0.0, 1.0)).all():
        raise ValueError("masks must be binary (0/1)")
    t = m.shape[0]
    counts = m.sum(axis=0)
    return m * (t / (counts + epsilon))


def motion_weight(frames: np.ndarray, index: int, config: SamplerConfig) -> np.ndarray:
    """Clamped max color change of frame ``index`` within its temporal window.

    For candidate frames j = index +/- k * window_stride with |j - index| <=
    tau (j valid, j != index), computes the per-pixel mean absolute RGB
    difference and takes the max over candidates, then clamps it by alpha
    according to ``clamp_mode``.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"frames must be (T, H, W, 3), got shape {frames.shape}")
    t = frames.shape[0]
    if not 0 <= index < t:
        raise IndexError(f"frame index {index} out of range for {t} frames")
    candidates = []
    for k in range(config.window_stride, config.tau + 1, config.window_stride):
        for j in (index - k, index + k):
            if 0 <= j < t:
                candidates.append(j)
    if not candidates:
        raise ValueError(
            f"no candidate frames within tau={config.tau} of frame {index} "
            f"at stride {config.window_stride}"
        )
    ref = frames[index].astype(np.float64)
    best = np.zeros(frames.shape[1:3])
    for j in candidates:
        diff = np.abs(ref - frames[j].astype(np.float64)).mean(axis=-1)
        np.maximum(best, diff, out=best)
    if config.clamp_mode == "min":
        return np.minimum(best, config.alpha)
    return np.maximum(best, config.alpha)


def combine_and_normalize(occlusion: np.ndarray, motion: np.ndarray) -> np.ndarray:
    """Normalize the product of the two maps into a per-frame PMF.

    If the product is all-zero but some pixel is visible, falls back to
    uniform over the visible support; with no visible pixel at all the frame
    is unsampleable and :class:`DegenerateFrameError` is raised.
    """
    occlusion = np.asarray(occlusion, dtype=np.float64)
    motion = np.asarray(motion, dtype=np.float64)
    if occlusion.shape != motion.shape:
        raise ValueError(
            f"map shapes differ: {occlusion.shape} vs {motion.shape}"
        )
    if (occlusion < 0).any() or (motion < 0).any():
        raise ValueError("importance maps must be non-negative")
    combined = occlusion * motion
    total = combined.sum()
    if total > 0:
        return combined / total
    support = occlusion > 0
    n_support = support.sum()
    if n_support == 0:
        raise DegenerateFrameError("frame has no visible pixels to sample")
    return support.astype(np.float64) / n_support


@dataclass
class ImportanceMaps:
    """Per-frame sampling maps; all arrays are (T, H, W) float64."""

    occlusion: np.ndarray
    motion: np.ndarray
    pmf: np.ndarray


def build_importance_maps(
    frames: np.ndarray, masks: np.ndarray, config: SamplerConfig
) -> ImportanceMaps:
    frames = np.asarray(frames)
    masks = np.asarray(masks)
    if frames.shape[:3] != masks.shape:
        raise ValueError(
            f"frames {frames.shape} and masks {masks.shape} disagree on (T, H, W)"
        )
    occ = occlusion_importance(masks, config.epsilon)
    motion = np.stack(
        [motion_weight(frames, i, config) for i in range(frames.shape[0])]
    )
    pmf = np.stack(
        [combine_and_normalize(occ[i], motion[i]) for i in range(frames.shape[0])]
    )
    return ImportanceMaps(occlusion=occ, motion=motion, pmf=pmf)


def draw_rays(pmf: np.ndarray, n_rays: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_rays`` flat pixel indices (row-major) i.i.d. from a (H, W) PMF."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    if (pmf < 0).any():
        raise ValueError("PMF entries must be non-negative")
    flat = pmf.reshape(-1)
    total = flat.sum()
    if not np.isclose(total, 1.0, rtol=0.0, atol=1e-9):
        raise ValueError(f"PMF must sum to 1, got {total!r}")
    cdf = np.cumsum(flat)
    cdf[-1] = 1.0
    u = rng.random(n_rays)
    return np.minimum(np.searchsorted(cdf, u, side="right"), flat.size - 1).astype(np.int64)
