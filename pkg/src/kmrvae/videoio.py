"""Video container, PPM dumps and the synthetic clip generator.

Videos live in memory as float32 arrays shaped [3,T,H,W] with values in
[0,1]. On disk the container is:

    magic   4 bytes  "DCVR"
    version u16      1
    T,H,W   u32 each little endian
    payload T*3*H*W float32 little endian, frame major, channel planar

Round trips are bitwise lossless for in-range payloads.

The generator produces textured clips with one to three moving shapes in
three regimes (translate, multi-object, scale-change). Each sample
carries a ground-truth flow field mapping every frame back to frame 0,
built so that warping frame 0 by that flow reproduces the frame wherever
the sample's validity mask is set. Translate and multi-object regimes
move content by whole pixels; the scale-change regime grows shapes whose
intensity is affine in position, which bilinear sampling reconstructs
exactly, so the guarantee survives fractional flows there too.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"DCVR"
VERSION = 1
_HEADER = struct.Struct("<HIII")
_HEADER_LEN = 4 + _HEADER.size

REGIMES = ("translate", "multi-object", "scale-change")


def check_video(video: np.ndarray) -> np.ndarray:
    """Validate the [3,T,H,W] float32 in-[0,1] contract; returns the array."""
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[0] != 3:
        raise ShapeError(f"video must be [3,T,H,W], got {video.shape}")
    if video.dtype != np.float32:
        raise ShapeError(f"video must be float32, got {video.dtype}")
    if not np.all(np.isfinite(video)):
        raise ShapeError("video contains non-finite values")
    if video.size and (video.min() < 0.0 or video.max() > 1.0):
        raise ShapeError(
            f"video values must lie in [0,1], got range "
            f"[{video.min():.6g}, {video.max():.6g}]")
    return video


def save_video(path: str, video: np.ndarray) -> None:
    """Write a [3,T,H,W] video; values are clamped to [0,1] first."""
    video = np.asarray(video, dtype=np.float32)
    if video.ndim != 4 or video.shape[0] != 3:
        raise ShapeError(f"video must be [3,T,H,W], got {video.shape}")
    if not np.all(np.isfinite(video)):
        raise ShapeError("refusing to write non-finite values")
    clipped = np.clip(video, 0.0, 1.0)
    _, t, h, w = clipped.shape
    payload = np.ascontiguousarray(clipped.transpose(1, 0, 2, 3),
                                   dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, t, h, w))
        f.write(payload)


def load_video(path: str) -> np.ndarray:
    """Read a container written by save_video; strict validation."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER_LEN:
        raise FormatError(
            f"{path}: truncated header, need {_HEADER_LEN} bytes, file ends "
            f"at offset {len(blob)}")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    version, t, h, w = _HEADER.unpack_from(blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if t < 1 or h < 1 or w < 1:
        raise FormatError(f"{path}: degenerate dimensions T={t} H={h} W={w}")
    expected = _HEADER_LEN + t * 3 * h * w * 4
    if len(blob) != expected:
        raise FormatError(
            f"{path}: header promises {expected} bytes (payload at offset "
            f"{_HEADER_LEN}), file ends at offset {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER_LEN)
    video = flat.reshape(t, 3, h, w).transpose(1, 0, 2, 3)
    video = np.ascontiguousarray(video, dtype=np.float32)
    if not np.all(np.isfinite(video)):
        raise FormatError(f"{path}: payload contains non-finite values")
    if video.min() < 0.0 or video.max() > 1.0:
        raise FormatError(f"{path}: payload values outside [0,1]")
    return video


def dump_ppm(video: np.ndarray, directory: str, prefix: str = "frame",
             signed: bool = False) -> list:
    """Write one binary PPM (P6, maxval 255) per frame.

    signed=True maps value v through 0.5 + v/2 before quantizing, so zero
    lands on byte 128; used for motion and residual visualization.
    """
    video = np.asarray(video, dtype=np.float32)
    if video.ndim != 4 or video.shape[0] != 3:
        raise ShapeError(f"expected [3,T,H,W], got {video.shape}")
    os.makedirs(directory, exist_ok=True)
    _, t, h, w = video.shape
    paths = []
    for i in range(t):
        frame = video[:, i]
        if signed:
            frame = 0.5 + frame / 2.0
        frame = np.clip(frame, 0.0, 1.0)
        bytes_ = np.rint(frame * 255.0).astype(np.uint8).transpose(1, 2, 0)
        path = os.path.join(directory, f"{prefix}_{i:03d}.ppm")
        with open(path, "wb") as f:
            f.write(b"P6\n%d %d\n255\n" % (w, h))
            f.write(bytes_.tobytes())
        paths.append(path)
    return paths


@dataclass
class SyntheticSample:
    """One generated clip.

    video     [3,T,H,W] float32 in [0,1]
    true_flow [2,T,H,W] float32, (dx, dy) sampling offsets into frame 0
    valid     [T,H,W] bool, pixels where warping frame 0 by true_flow
              is guaranteed to reproduce the frame (in-bounds samples,
              no disocclusion, shape-boundary bands excluded for the
              scale-change regime)
    regime    generator regime name
    """

    video: np.ndarray
    true_flow: np.ndarray
    valid: np.ndarray
    regime: str


def _smooth_noise(rng, h, w, cell=6):
    gh = h // cell + 2
    gw = w // cell + 2
    grid = rng.random((3, gh, gw), dtype=np.float64)
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = ys.astype(np.int64)
    x0 = xs.astype(np.int64)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    g00 = grid[:, y0][:, :, x0]
    g01 = grid[:, y0][:, :, x0 + 1]
    g10 = grid[:, y0 + 1][:, :, x0]
    g11 = grid[:, y0 + 1][:, :, x0 + 1]
    out = (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
           + g10 * fy * (1 - fx) + g11 * fy * fx)
    return (0.15 + 0.7 * out).astype(np.float32)


def _shape_mask(kind, h, w, cy, cx, ry, rx):
    yy = np.arange(h)[:, None] - cy
    xx = np.arange(w)[None, :] - cx
    if kind == "rect":
        return (np.abs(yy) <= ry) & (np.abs(xx) <= rx)
    return (yy / ry) ** 2 + (xx / rx) ** 2 <= 1.0


def _paint(canvas, mask, color, grad, oy=0.0, ox=0.0):
    """Fill mask with an affine intensity field anchored at (oy, ox)."""
    h, w = mask.shape
    field = (color[:, None, None]
             + grad[0] * (np.arange(h, dtype=np.float32)[None, :, None] - oy)
             + grad[1] * (np.arange(w, dtype=np.float32)[None, None, :] - ox))
    canvas[:, mask] = np.clip(field, 0.05, 0.95)[:, mask]


def _velocity(rng, vmax):
    while True:
        vy = int(rng.integers(-vmax, vmax + 1))
        vx = int(rng.integers(-vmax, vmax + 1))
        if vx or vy:
            return vy, vx


def _cumshifts(t, vy, vx, budget):
    """Cumulative integer shifts per frame, frozen once the largest axis
    would pass the displacement budget."""
    n_max = budget // max(abs(vy), abs(vx))
    return [(min(i, n_max) * vy, min(i, n_max) * vx) for i in range(t)]


def _gen_translate(rng, t, h, w):
    budget = min(h, w) // 4
    margin = budget
    ch, cw = h + 2 * margin, w + 2 * margin
    canvas = _smooth_noise(rng, ch, cw)
    n_shapes = int(rng.integers(1, 4))
    for _ in range(n_shapes):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        ry = int(rng.integers(3, max(4, h // 5) + 1))
        rx = int(rng.integers(3, max(4, w // 5) + 1))
        cy = int(rng.integers(ry, ch - ry))
        cx = int(rng.integers(rx, cw - rx))
        _paint(canvas, _shape_mask(kind, ch, cw, cy, cx, ry, rx),
               rng.random(3).astype(np.float32) * 0.8 + 0.1,
               (rng.random(2) - 0.5) * 0.016)
    vmax = max(1, budget // max(1, t - 1))
    vy, vx = _velocity(rng, vmax)
    cums = _cumshifts(t, vy, vx, budget)
    video = np.empty((3, t, h, w), dtype=np.float32)
    flow = np.zeros((2, t, h, w), dtype=np.float32)
    valid = np.zeros((t, h, w), dtype=bool)
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    for i, (sy, sx) in enumerate(cums):
        video[:, i] = canvas[:, margin + sy:margin + sy + h,
                             margin + sx:margin + sx + w]
        flow[0, i] = sx
        flow[1, i] = sy
        valid[i] = ((xs + sx >= 0) & (xs + sx <= w - 1)
                    & (ys + sy >= 0) & (ys + sy <= h - 1))
    return video, flow, valid


def _gen_multi_object(rng, t, h, w):
    budget = min(h, w) // 4
    vmax = max(1, budget // max(1, t - 1))
    background = _smooth_noise(rng, h, w)
    n_obj = int(rng.integers(1, 4))
    objs = []
    for _ in range(n_obj):
        for _attempt in range(200):
            kind = "rect" if rng.random() < 0.5 else "ellipse"
            ry = int(rng.integers(2, max(3, h // 6) + 1))
            rx = int(rng.integers(2, max(3, w // 6) + 1))
            vy, vx = _velocity(rng, vmax)
            cums = _cumshifts(t, vy, vx, budget)
            lo_y = ry - min(sy for sy, _ in cums)
            hi_y = h - 1 - ry - max(sy for sy, _ in cums)
            lo_x = rx - min(sx for _, sx in cums)
            hi_x = w - 1 - rx - max(sx for _, sx in cums)
            if hi_y < lo_y or hi_x < lo_x:
                continue
            cy = int(rng.integers(lo_y, hi_y + 1))
            cx = int(rng.integers(lo_x, hi_x + 1))
            boxes = [(cy + sy - ry - 1, cy + sy + ry + 1,
                      cx + sx - rx - 1, cx + sx + rx + 1)
                     for sy, sx in cums]
            clash = False
            for other in objs:
                for (ay0, ay1, ax0, ax1), (by0, by1, bx0, bx1) in zip(
                        boxes, other["boxes"]):
                    if ay0 <= by1 and by0 <= ay1 and ax0 <= bx1 and bx0 <= ax1:
                        clash = True
                        break
                if clash:
                    break
            if not clash:
                objs.append(dict(
                    kind=kind, ry=ry, rx=rx, cy=cy, cx=cx, cums=cums,
                    boxes=boxes,
                    color=rng.random(3).astype(np.float32) * 0.8 + 0.1,
                    grad=(rng.random(2) - 0.5) * 0.016))
                break
    video = np.empty((3, t, h, w), dtype=np.float32)
    flow = np.zeros((2, t, h, w), dtype=np.float32)
    valid = np.ones((t, h, w), dtype=bool)
    frame0_support = np.zeros((h, w), dtype=bool)
    for o in objs:
        frame0_support |= _shape_mask(o["kind"], h, w, o["cy"], o["cx"],
                                      o["ry"], o["rx"])
    for i in range(t):
        frame = background.copy()
        covered = np.zeros((h, w), dtype=bool)
        for o in objs:
            sy, sx = o["cums"][i]
            m = _shape_mask(o["kind"], h, w, o["cy"] + sy, o["cx"] + sx,
                            o["ry"], o["rx"])
            # appearance is anchored to the moving center so the shape
            # carries its texture along; sampling frame 0 at p + flow
            # therefore lands exactly on the same field value
            _paint(frame, m, o["color"], o["grad"],
                   oy=o["cy"] + sy, ox=o["cx"] + sx)
            flow[0, i][m] = -sx
            flow[1, i][m] = -sy
            covered |= m
        video[:, i] = frame
        # background pixels that sat under a shape at t=0 cannot be
        # reproduced by sampling frame 0, mark them invalid
        valid[i] = covered | ~frame0_support
    return video, flow, valid


def _gen_scale_change(rng, t, h, w):
    budget = min(h, w) // 4
    background = _smooth_noise(rng, h, w)
    n_obj = int(rng.integers(1, 3))
    flow = np.zeros((2, t, h, w), dtype=np.float32)
    valid = np.ones((t, h, w), dtype=bool)
    frames = [background.copy() for _ in range(t)]
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    placed = []
    for _ in range(n_obj):
        for _attempt in range(200):
            r0 = float(rng.integers(3, max(4, min(h, w) // 6) + 1))
            grow = budget / r0
            rate = rng.uniform(0.05, min(0.6, grow)) / max(1, t - 1)
            r_final = r0 * (1.0 + rate * (t - 1))
            lo = int(math.ceil(r_final)) + 1
            if h - lo <= lo or w - lo <= lo:
                continue
            cy = float(rng.integers(lo, h - lo))
            cx = float(rng.integers(lo, w - lo))
            if any((cy - py) ** 2 + (cx - px) ** 2
                   <= (r_final + pr + 2.0) ** 2 for py, px, pr in placed):
                continue
            placed.append((cy, cx, r_final))
            break
        else:
            continue
        base = rng.random(3) * 0.4 + 0.3
        gy = (rng.random(3) - 0.5) * 0.4 / r0
        gx = (rng.random(3) - 0.5) * 0.4 / r0
        for i in range(t):
            k = 1.0 + rate * i
            qy = (yy - cy) / k
            qx = (xx - cx) / k
            inside = qy ** 2 + qx ** 2 <= r0 ** 2
            # intensity is affine in the frame-0 pre-image coordinate, so
            # bilinear interpolation of frame 0 recovers it exactly
            field = (base[:, None, None] + gy[:, None, None] * qy
                     + gx[:, None, None] * qx)
            frames[i][:, inside] = field.astype(np.float32)[:, inside]
            if i > 0:
                fx_full = np.broadcast_to(qx - (xx - cx), (h, w))
                fy_full = np.broadcast_to(qy - (yy - cy), (h, w))
                flow[0, i][inside] = fx_full[inside]
                flow[1, i][inside] = fy_full[inside]
                # the 2x2 bilinear footprint of the source point must sit
                # strictly inside the frame-0 disk
                sx = qx + cx
                sy = qy + cy
                ok = np.ones((h, w), dtype=bool)
                for oy in (0.0, 1.0):
                    for ox in (0.0, 1.0):
                        fy = np.floor(sy) + oy - cy
                        fx = np.floor(sx) + ox - cx
                        ok &= fy ** 2 + fx ** 2 <= (r0 - 0.5) ** 2
                valid[i][inside] &= ok[inside]
                ring = inside & ~_erode(inside)
                valid[i][ring] = False
    # shapes only grow in place, so nothing that was covered at t=0 is
    # ever uncovered later and background pixels stay valid everywhere
    video = np.stack(frames, axis=1)
    return video, flow, valid


def _erode(mask):
    out = mask.copy()
    out[1:] &= mask[:-1]
    out[:-1] &= mask[1:]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    return out


def gen_synthetic(seed: int, t: int, h: int, w: int,
                  regime: str = "translate") -> SyntheticSample:
    """Deterministic synthetic clip for a seed, size and regime."""
    if regime not in REGIMES:
        raise ShapeError(f"unknown regime {regime!r}, expected one of {REGIMES}")
    if h < 16 or w < 16:
        raise ShapeError(f"minimum spatial extent is 16, got {h}x{w}")
    if t < 2:
        raise ShapeError(f"need at least 2 frames, got {t}")
    rng = np.random.default_rng(seed)
    if regime == "translate":
        video, flow, valid = _gen_translate(rng, t, h, w)
    elif regime == "multi-object":
        video, flow, valid = _gen_multi_object(rng, t, h, w)
    else:
        video, flow, valid = _gen_scale_change(rng, t, h, w)
    video = np.clip(video, 0.0, 1.0).astype(np.float32)
    budget = min(h, w) / 4.0
    peak = float(np.abs(flow).max()) if flow.size else 0.0
    if peak > budget + 1e-6:
        raise AssertionError(
            f"generator exceeded displacement budget: {peak} > {budget}")
    return SyntheticSample(video=video, true_flow=flow.astype(np.float32),
                           valid=valid, regime=regime)


def synthesize_dataset(seed: int, n: int, t: int, h: int, w: int,
                       regime: str = "translate"):
    """n clips with per-clip seeds spread out so different base seeds
    never share a clip."""
    return [gen_synthetic(seed * 100003 + i, t, h, w, regime)
            for i in range(n)]
