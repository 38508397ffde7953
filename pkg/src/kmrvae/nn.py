"""Layer plumbing shared by the motion, encoder and decoder networks.

Networks here are plain objects holding named parameter Tensors; a
parameter dict (name -> Tensor) is the unit the optimizer, freeze sets
and checkpoints operate on. Names are dotted paths and must not contain
'#', which the checkpoint format reserves for optimizer entries.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

LEAKY_SLOPE = 0.2


def he_std(fan_in: int, slope: float = LEAKY_SLOPE) -> float:
    """Weight std for leaky-relu layers: sqrt(2 / ((1+slope^2) * fan_in))."""
    return float(np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in)))


class Conv3d:
    """Convolution layer over [C,T,H,W] with owned weight and bias."""

    def __init__(self, rng, cin: int, cout: int, kernel=(1, 3, 3),
                 stride=1, padding=None, zero_init: bool = False):
        kt, kh, kw = kernel
        if padding is None:
            padding = (kt // 2, kh // 2, kw // 2)
        self.stride = stride
        self.padding = padding
        fan_in = cin * kt * kh * kw
        if zero_init:
            w = np.zeros((cout, cin, kt, kh, kw), np.float32)
        else:
            w = rng.standard_normal((cout, cin, kt, kh, kw)).astype(
                np.float32) * np.float32(he_std(fan_in))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv3d(x, self.weight, self.bias, self.stride, self.padding)

    def named(self, prefix: str):
        yield prefix + ".weight", self.weight
        yield prefix + ".bias", self.bias


def collect(pairs) -> dict:
    """Build a parameter dict from (name, tensor) pairs, rejecting
    duplicates and reserved characters."""
    out = {}
    for name, t in pairs:
        if "#" in name:
            raise ShapeError(f"parameter name {name!r} contains reserved '#'")
        if name in out:
            raise ShapeError(f"duplicate parameter name {name!r}")
        out[name] = t
    return out


def param_count(params: dict) -> int:
    return sum(int(t.size) for t in params.values())
