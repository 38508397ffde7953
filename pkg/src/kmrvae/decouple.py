"""Splitting a clip into keyframe, motion and residual stacks, and the
inverse recoupling.

The algebra is the invertible part of the codec and is deliberately free
of anything learned: residuals are whatever the warp could not explain,
so warp-plus-residual returns the original frames no matter how wrong
the motion estimate is. Residuals stay signed and unclamped; clamping
anywhere in here would break that identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import motion as motion_mod
from .autodiff import Tensor
from .errors import ShapeError


@dataclass
class DecoupledComponents:
    """Three [3,T,H,W] stacks: keyframe replicated along T, per-frame
    motion fields (flow-x, flow-y, scale), and signed residuals."""

    x_k: Tensor
    x_m: Tensor
    x_r: Tensor

    @property
    def shape(self):
        return self.x_k.shape


def _as_video_tensor(video) -> Tensor:
    if not isinstance(video, Tensor):
        video = Tensor(np.asarray(video, dtype=np.float32))
    if video.ndim != 4 or video.shape[0] != 3:
        raise ShapeError(f"video must be [3,T,H,W], got {video.shape}")
    return video


def decouple_with_motion(video, motion: Tensor) -> DecoupledComponents:
    """Assemble components from a clip and a given [3,T,H,W] motion stack
    (the net-free path; tests inject ground-truth flow here)."""
    video = _as_video_tensor(video)
    if motion.shape != video.shape:
        raise ShapeError(
            f"motion stack {motion.shape} must match video {video.shape}")
    key = video[:, 0]
    predicted = motion_mod.warp(key, motion)
    residual = ad.sub(video, predicted)
    x_k = ad.stack([key] * video.shape[1], axis=1)
    return DecoupledComponents(x_k=x_k, x_m=motion, x_r=residual)


def decouple(video, net: motion_mod.MotionNet) -> DecoupledComponents:
    """Estimate motion for every frame (frame 0 against itself included)
    and split the clip. Differentiable end to end: gradients reach the
    net's parameters and the video."""
    video = _as_video_tensor(video)
    key = video[:, 0]
    motion = net.forward_clip(video, key)
    return decouple_with_motion(video, motion)


def recouple(keyframe_hat: Tensor, motion_hat: Tensor,
             residual_hat: Tensor) -> Tensor:
    """warp(keyframe, motion) + residual per frame -> [3,T,H,W].

    Output is intentionally not clamped; quantization to [0,1] happens
    only when a video is written out or scored."""
    if keyframe_hat.ndim != 3:
        raise ShapeError(
            f"keyframe must be [3,H,W], got {keyframe_hat.shape}")
    if motion_hat.shape != residual_hat.shape:
        raise ShapeError(
            f"motion {motion_hat.shape} and residual {residual_hat.shape} "
            f"must match")
    if motion_hat.shape[2:] != keyframe_hat.shape[1:]:
        raise ShapeError(
            f"spatial mismatch: motion {motion_hat.shape[2:]} vs keyframe "
            f"{keyframe_hat.shape[1:]}")
    predicted = motion_mod.warp(keyframe_hat, motion_hat)
    return ad.add(predicted, residual_hat)
