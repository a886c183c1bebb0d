"""Keypoint-space augmentation: random rotation, shear, and scaling.

One parameter triple is drawn per sequence (not per frame) so a training
sample is transformed coherently, and the composite affine map is applied
to the (x, y) plane of every frame about a pivot point. The z coordinate
(when present) and the confidence track are never touched, and transformed
coordinates are deliberately not clamped back into [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pose import PoseSequence

DEGENERATE_SCALE_EPS = 1e-6


@dataclass(frozen=True)
class AugmentationParams:
    """One sampled transform triple.

    ``scale_delta`` is applied as a multiplicative factor 1 + scale_delta,
    so the distribution mean is the identity transform.
    """

    rotation_angle: float
    shear_factor: float
    scale_delta: float

    def __post_init__(self):
        for field in ("rotation_angle", "shear_factor", "scale_delta"):
            if not math.isfinite(getattr(self, field)):
                raise ValueError(f"{field} must be finite")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Sampler settings: one sigma for all three transforms.

    Disabled transforms still consume their draw from the stream (the
    sampled value is zeroed), so toggling a flag never shifts the random
    sequence seen by the other transforms.
    """

    sigma: float = 0.2
    center: tuple[float, float] = (0.5, 0.5)
    seed: int = 0
    enable_rotation: bool = True
    enable_shear: bool = True
    enable_scale: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def sample_params(policy: AugmentationPolicy, rng: np.random.Generator) -> AugmentationParams:
    """Draw rotation, shear, and scale delta independently from N(0, sigma^2).

    Draw order is fixed (rotation, shear, scale) and the generator state
    advances deterministically.
    """
    rotation = float(rng.normal(0.0, policy.sigma))
    shear = float(rng.normal(0.0, policy.sigma))
    scale = float(rng.normal(0.0, policy.sigma))
    return AugmentationParams(
        rotation_angle=rotation if policy.enable_rotation else 0.0,
        shear_factor=shear if policy.enable_shear else 0.0,
        scale_delta=scale if policy.enable_scale else 0.0,
    )


def transform_matrix(params: AugmentationParams) -> np.ndarray:
    """2x2 matrix of Scale(1 + delta) o Shear(s) o Rotate(theta).

    Shear is horizontal: (x, y) -> (x + s * y, y).
    """
    if abs(1.0 + params.scale_delta) <= DEGENERATE_SCALE_EPS:
        raise ValueError(
            f"degenerate scale: |1 + {params.scale_delta}| <= {DEGENERATE_SCALE_EPS}"
        )
    c, s = math.cos(params.rotation_angle), math.sin(params.rotation_angle)
    rotate = np.array([[c, -s], [s, c]], dtype=np.float64)
    shear = np.array([[1.0, params.shear_factor], [0.0, 1.0]], dtype=np.float64)
    scale = (1.0 + params.scale_delta) * np.eye(2)
    return scale @ shear @ rotate


def apply(
    p: PoseSequence,
    params: AugmentationParams,
    center: tuple[float, float] = (0.5, 0.5),
) -> PoseSequence:
    """Apply the composite affine map to the (x, y) plane of every keypoint.

    The map acts about ``center`` (translate to the pivot, transform,
    translate back), so the pivot is a fixed point. Frame count, fps, K, C,
    z, and confidence are unchanged.
    """
    m = transform_matrix(params)
    cx, cy = float(center[0]), float(center[1])
    xy = p.frames[:, :, :2].astype(np.float64)
    xy = xy - (cx, cy)
    xy = xy @ m.T
    xy = xy + (cx, cy)
    frames = p.frames.copy()
    frames[:, :, :2] = xy.astype(np.float32)
    return PoseSequence(p.fps, frames, p.confidence, p.components)
