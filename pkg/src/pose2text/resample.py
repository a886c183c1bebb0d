"""Temporal resampling of pose sequences via natural cubic splines.

Every coordinate track (and the confidence track) is treated as a plain
signal sampled at t / fps_in and re-evaluated on the target grid
t' / fps_out. The boundary condition is the natural spline (second
derivative zero at both ends), which reproduces constants and straight
lines exactly and keeps the scheme fully determined.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import floor

import numpy as np
from scipy.interpolate import CubicSpline

from .pose import PoseSequence, validate


@dataclass(frozen=True)
class ResampleSpec:
    """Target frame rate for resampling."""

    target_fps: Fraction

    def __post_init__(self):
        object.__setattr__(self, "target_fps", Fraction(self.target_fps))
        if self.target_fps <= 0:
            raise ValueError(f"target_fps must be positive, got {self.target_fps}")


def output_frame_count(t: int, src_fps: Fraction, target_fps: Fraction) -> int:
    """T' = floor((T - 1) * target / src) + 1, computed in exact arithmetic."""
    return floor((t - 1) * Fraction(target_fps) / Fraction(src_fps)) + 1


def resample(p: PoseSequence, spec: ResampleSpec) -> PoseSequence:
    """Resample a pose sequence to ``spec.target_fps``.

    Output grid time 0 coincides with input time 0, and the first output
    frame is the first input frame verbatim. Zero-confidence gaps are
    interpolated straight through; the resampled confidence track carries
    the missing-data information and is clamped to [0, 1]. Coordinates are
    clamped to [0, 1] only when the input passes :func:`validate`, so bad
    ingests stay visibly bad.
    """
    if p.fps <= 0 or spec.target_fps <= 0:
        raise ValueError("frame rates must be positive")
    t_in = p.num_frames
    if t_in == 1:
        return PoseSequence(spec.target_fps, p.frames, p.confidence, p.components)

    t_out = output_frame_count(t_in, p.fps, spec.target_fps)
    src_dt = p.fps.denominator / p.fps.numerator
    out_dt = spec.target_fps.denominator / spec.target_fps.numerator
    x_src = np.arange(t_in, dtype=np.float64) * src_dt
    x_out = np.arange(t_out, dtype=np.float64) * out_dt

    coords = CubicSpline(x_src, p.frames.astype(np.float64), axis=0, bc_type="natural")(x_out)
    conf = CubicSpline(x_src, p.confidence.astype(np.float64), axis=0, bc_type="natural")(x_out)

    if not validate(p):
        coords = np.clip(coords, 0.0, 1.0)
    conf = np.clip(conf, 0.0, 1.0)

    coords = coords.astype(np.float32)
    conf = conf.astype(np.float32)
    coords[0] = p.frames[0]
    conf[0] = p.confidence[0]
    return PoseSequence(spec.target_fps, coords, conf, p.components)
