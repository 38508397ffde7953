"""Motion estimation and scale-space warping.

A clip's motion is a per-frame [3,H,W] field: horizontal flow in pixels,
vertical flow in pixels, and a raw scale value that selects a blur level
of the keyframe (clamped to [0,1] inside the warp). The estimator is a
small four-layer convolutional net over Concat(x_t, x_0) whose final
layer starts at zero, so a fresh net predicts zero motion and the warp
is an exact identity.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import metrics
from . import nn
from . import optim
from .autodiff import Tensor
from .errors import ShapeError, TrainingAborted

PYRAMID_LEVELS = 4
SIGMA0 = 0.5  # level s is blurred with sigma = SIGMA0 * 2**s

MIN_EXTENT = 16  # the sigma=4 kernel needs spatial extent > 12


def build_pyramid(frame: Tensor) -> Tensor:
    """Stack [S,C,H,W] of progressively blurred copies of a [C,H,W] frame.

    Level 0 is the frame itself, bit for bit; every deeper level is
    blurred directly from it (not from the previous level)."""
    if frame.ndim != 3:
        raise ShapeError(f"expected [C,H,W], got {frame.shape}")
    levels = [frame]
    for s in range(1, PYRAMID_LEVELS):
        levels.append(ad.gaussian_blur2d(frame, SIGMA0 * 2.0 ** s))
    return ad.stack(levels, axis=0)


def warp_frame(frame0: Tensor, motion_t: Tensor,
               pyramid: Tensor | None = None) -> Tensor:
    """Warp one [C,H,W] keyframe by one [3,H,W] motion field."""
    if pyramid is None:
        pyramid = build_pyramid(frame0)
    return ad.scale_space_warp(pyramid, motion_t)


def warp(frame0: Tensor, motion: Tensor) -> Tensor:
    """Warp a [C,H,W] keyframe by a [3,T,H,W] motion clip -> [C,T,H,W].

    The pyramid is built once and sampled per frame."""
    if motion.ndim != 4 or motion.shape[0] != 3:
        raise ShapeError(f"motion must be [3,T,H,W], got {motion.shape}")
    pyramid = build_pyramid(frame0)
    outs = [ad.scale_space_warp(pyramid, motion[:, t])
            for t in range(motion.shape[1])]
    return ad.stack(outs, axis=1)


class MotionNet:
    """Concat(x_t, x_0) -> [3,H,W] motion, all frames in one pass.

    The 3x3 kernels never mix time (kernel extent 1 on T), so running the
    whole clip through one conv equals running frames one at a time."""

    WIDTH = 32

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        w = self.WIDTH
        self.layers = [
            nn.Conv3d(rng, 6, w),
            nn.Conv3d(rng, w, w),
            nn.Conv3d(rng, w, w),
            nn.Conv3d(rng, w, 3, zero_init=True),
        ]
        self.params = nn.collect(
            pair for i, layer in enumerate(self.layers)
            for pair in layer.named(f"motion_net.conv{i}"))

    def forward_clip(self, video: Tensor, keyframe: Tensor) -> Tensor:
        """video [3,T,H,W], keyframe [3,H,W] -> motion [3,T,H,W]."""
        if video.ndim != 4 or video.shape[0] != 3:
            raise ShapeError(f"video must be [3,T,H,W], got {video.shape}")
        if keyframe.shape != video.shape[:1] + video.shape[2:]:
            raise ShapeError(
                f"keyframe {keyframe.shape} does not match video "
                f"{video.shape}")
        t = video.shape[1]
        key_rep = ad.stack([keyframe] * t, axis=1)
        h = ad.concat([video, key_rep], axis=0)
        for layer in self.layers[:-1]:
            h = ad.leaky_relu(layer(h), nn.LEAKY_SLOPE)
        return self.layers[-1](h)


def motion_forward(net: MotionNet, x_t: Tensor, x_0: Tensor) -> Tensor:
    """Single-pair form: two [3,H,W] frames -> one [3,H,W] motion field."""
    if x_t.shape != x_0.shape or x_t.ndim != 3:
        raise ShapeError(
            f"x_t and x_0 must share shape [3,H,W], got {x_t.shape} vs "
            f"{x_0.shape}")
    clip = ad.stack([x_t], axis=1)
    return net.forward_clip(clip, x_0)[:, 0]


def pretrain_motion(net: MotionNet, dataset, steps: int, lr: float = 3e-3,
                    rng=0, batch_size: int = 4, clip_norm: float = 1.0,
                    blur0: float = 0.4, anneal_frac: float = 0.6,
                    log=None) -> MotionNet:
    """Warm the motion net up by minimizing mean |warp(x0, M(clip)) - x|.

    Plain photometric descent stalls in local minima once shifts exceed a
    pixel or two, so for the first anneal_frac of the run a constant
    offset (starting at blur0, decaying linearly to zero) is added to the
    predicted scale channel: the warp then reads blurred pyramid levels
    whose wider photometric basin lets the flow find the right
    neighborhood before the offset fades and the objective becomes the
    plain sharp-level L1.

    dataset is a sequence of [3,T,H,W] arrays. Zero steps leaves the
    parameters untouched. Raises on a non-finite loss, reporting the
    step."""
    if not len(dataset):
        raise ShapeError("pretrain_motion needs a non-empty dataset")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    state = optim.AdamState(lr=lr)
    horizon = max(1, int(steps * anneal_frac))
    for step in range(1, steps + 1):
        blur = blur0 * max(0.0, 1.0 - (step - 1) / horizon)
        idx = rng.integers(0, len(dataset), size=batch_size)
        losses = []
        psnrs = []
        for j in idx:
            clip = Tensor(np.asarray(dataset[j], dtype=np.float32))
            key = clip[:, 0]
            mot = net.forward_clip(clip, key)
            if blur > 0.0:
                mot = ad.concat([mot[0:2], ad.add(mot[2:3], blur)], axis=0)
            pred = warp(key, mot)
            losses.append(ad.mean(ad.absolute(ad.sub(pred, clip))))
            if log is not None:
                psnrs.append(metrics.psnr(pred.data, clip.data))
        loss = ad.mean(ad.stack(losses))
        val = loss.item()
        if not np.isfinite(val):
            raise TrainingAborted(f"non-finite warm-up loss {val}", step)
        optim.zero_grad(net.params)
        loss.backward()
        optim.clip_global_norm(net.params, clip_norm)
        optim.adam_step(net.params, state)
        if log is not None:
            log(step, val, float(np.mean(psnrs)))
    return net


def warp_l1(net: MotionNet, dataset) -> float:
    """Mean warp error over a dataset, no gradients."""
    total = 0.0
    with ad.no_grad():
        for clip_arr in dataset:
            clip = Tensor(np.asarray(clip_arr, dtype=np.float32))
            key = clip[:, 0]
            mot = net.forward_clip(clip, key)
            pred = warp(key, mot)
            total += float(np.abs(pred.data - clip.data).mean())
    return total / len(dataset)
