"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps one ndarray plus an optional gradient. Operations build a
dynamic graph of backward closures; Tensor.backward() walks it once in
reverse topological order. Storage is float32 by default, float64 works
end to end and is what the gradient checker uses as its shadow precision.

Broadcasting is deliberately restricted: binary operations accept
operands of identical shape, or one operand that is a scalar (a python
number or a size-1 tensor). Anything else raises ShapeError. Heavy
kernels (conv3d, blur, warp) are dispatched through kmrvae.backend.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend
from .errors import ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)
_grad_enabled = [True]


def is_grad_enabled() -> bool:
    return _grad_enabled[0]


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        self._prev = _grad_enabled[0]
        _grad_enabled[0] = False
        return self

    def __exit__(self, *exc):
        _grad_enabled[0] = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
            arr = data  # keep caller's float precision
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a size-1 tensor, got {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        """Backpropagate from a scalar; accumulates into .grad of leaves."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() starts from a scalar loss, got shape {self.data.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None:
                node._bwd(node.grad)
                # release closure buffers as soon as they are spent
                node._bwd = None
                node._parents = ()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor_like(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op suite")
        return div_scalar(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _from_op(data: np.ndarray, parents, bwd) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    req = _grad_enabled[0] and any(p.requires_grad for p in parents)
    out.requires_grad = req
    if req:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._bwd = bwd
    else:
        out._parents = ()
        out._bwd = None
    return out


def _as_tensor_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _check_pair(a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # fold gradient of a broadcast scalar back to its stored shape
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(t.shape)


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor_like(b, a)
    _check_pair(a, b)
    data = a.data + b.data

    def bwd(g):
        _accum(a, _reduce_to(g, a))
        _accum(b, _reduce_to(g, b))

    return _from_op(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor_like(b, a)
    _check_pair(a, b)
    data = a.data - b.data

    def bwd(g):
        _accum(a, _reduce_to(g, a))
        _accum(b, _reduce_to(-g, b))

    return _from_op(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor_like(b, a)
    _check_pair(a, b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        _accum(a, _reduce_to(g * bd, a))
        _accum(b, _reduce_to(g * ad, b))

    return _from_op(data, (a, b), bwd)


def div_scalar(a: Tensor, s) -> Tensor:
    s = a.dtype.type(s)
    data = a.data / s

    def bwd(g):
        _accum(a, g / s)

    return _from_op(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * data)

    return _from_op(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    ad = a.data

    def bwd(g):
        _accum(a, g / ad)

    return _from_op(data, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) computed without overflow."""
    data = np.logaddexp(a.dtype.type(0), a.data)
    ad = a.data

    def bwd(g):
        e = np.exp(-np.abs(ad))
        sig = np.where(ad >= 0, 1 / (1 + e), e / (1 + e))
        _accum(a, g * sig.astype(g.dtype, copy=False))

    return _from_op(data, (a,), bwd)


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)
    ad = a.data

    def bwd(g):
        _accum(a, g * np.sign(ad))

    return _from_op(data, (a,), bwd)


def square(a: Tensor) -> Tensor:
    data = a.data * a.data
    ad = a.data

    def bwd(g):
        _accum(a, g * (2 * ad))

    return _from_op(data, (a,), bwd)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    al = a.dtype.type(alpha)
    ad = a.data
    data = np.where(ad >= 0, ad, ad * al)

    def bwd(g):
        _accum(a, g * np.where(ad >= 0, a.dtype.type(1), al))

    return _from_op(data, (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the closed interval passes gradient through."""
    ad = a.data
    data = np.clip(ad, a.dtype.type(lo), a.dtype.type(hi))

    def bwd(g):
        mask = ((ad >= lo) & (ad <= hi)).astype(g.dtype)
        _accum(a, g * mask)

    return _from_op(data, (a,), bwd)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axis = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def bwd(g):
        _accum(a, _spread(g, shape, axis, keepdims))

    return _from_op(np.asarray(data), (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        count = 1
        for ax in axis:
            count *= shape[ax]

    def bwd(g):
        _accum(a, _spread(g, shape, axis, keepdims) / g.dtype.type(count))

    return _from_op(np.asarray(data), (a,), bwd)


def _spread(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape).copy()
    if not keepdims:
        for ax in sorted(axis):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def concat(tensors, axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    dt = tensors[0].dtype
    for t in tensors:
        if t.dtype != dt:
            raise ShapeError("concat inputs must share a dtype")
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        off = 0
        for t, sz in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(off, off + sz)
            _accum(t, g[tuple(sl)])
            off += sz

    return _from_op(data, tuple(tensors), bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack of an empty sequence")
    shape0, dt = tensors[0].shape, tensors[0].dtype
    for t in tensors:
        if t.shape != shape0 or t.dtype != dt:
            raise ShapeError("stack inputs must share shape and dtype")
    axis = axis % (tensors[0].ndim + 1)
    data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            sl = [slice(None)] * g.ndim
            sl[axis] = i
            _accum(t, g[tuple(sl)])

    return _from_op(data, tuple(tensors), bwd)


def getitem(a: Tensor, key) -> Tensor:
    data = a.data[key]
    shape = a.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[key] += g
        _accum(a, gx)

    return _from_op(data, (a,), bwd)


def _triple(v, name):
    if isinstance(v, int):
        v = (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ShapeError(f"{name} must be an int or 3-tuple, got {v}")
    return v


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """3-d correlation over [C,T,H,W] with zero padding.

    Output extent per axis is floor((in + 2*pad - k) / stride) + 1.
    """
    st, sh, sw = _triple(stride, "stride")
    pt, ph, pw = _triple(padding, "padding")
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be [C,T,H,W], got {x.shape}")
    if weight.ndim != 5:
        raise ShapeError(f"conv3d weight must be [Co,Ci,kT,kH,kW], got {weight.shape}")
    if x.dtype != weight.dtype:
        raise ShapeError(f"dtype mismatch: {x.dtype} vs {weight.dtype}")
    co, ci, kt, kh, kw = weight.shape
    if x.shape[0] != ci:
        raise ShapeError(
            f"channel axis mismatch: input has {x.shape[0]} channels, "
            f"weight expects {ci}")
    if min(st, sh, sw) < 1:
        raise ShapeError(f"stride entries must be >= 1, got {(st, sh, sw)}")
    if min(pt, ph, pw) < 0:
        raise ShapeError(f"padding entries must be >= 0, got {(pt, ph, pw)}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"bias must have shape ({co},), got {bias.shape}")
    dims = {"T": (x.shape[1] + 2 * pt, kt), "H": (x.shape[2] + 2 * ph, kh),
            "W": (x.shape[3] + 2 * pw, kw)}
    for name, (padded, kk) in dims.items():
        if padded < kk:
            raise ShapeError(
                f"axis {name}: padded extent {padded} is smaller than the "
                f"kernel extent {kk}")

    kern = backend.active()
    xp = np.pad(x.data, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    wd = np.ascontiguousarray(weight.data)
    out = kern.conv3d_forward(xp, wd, st, sh, sw)
    if bias is not None:
        out = out + bias.data[:, None, None, None]
    tp, hp, wp = xp.shape[1:]

    def bwd(g):
        g = np.ascontiguousarray(g)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2, 3)))
        if weight.requires_grad:
            _accum(weight, kern.conv3d_bwd_weight(xp, g, kt, kh, kw, st, sh, sw))
        if x.requires_grad:
            gxp = kern.conv3d_bwd_input(wd, g, tp, hp, wp, st, sh, sw)
            _accum(x, gxp[:, pt:tp - pt, ph:hp - ph, pw:wp - pw])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _from_op(out, parents, bwd)


def upsample_nearest(x: Tensor, factors) -> Tensor:
    """Nearest-neighbour upsampling of [C,T,H,W] by integer factors."""
    ft, fh, fw = _triple(factors, "factors")
    if x.ndim != 4:
        raise ShapeError(f"upsample input must be [C,T,H,W], got {x.shape}")
    if min(ft, fh, fw) < 1:
        raise ShapeError(f"upsample factors must be >= 1, got {(ft, fh, fw)}")
    data = x.data.repeat(ft, axis=1).repeat(fh, axis=2).repeat(fw, axis=3)
    c, t, h, w = x.shape

    def bwd(g):
        _accum(x, g.reshape(c, t, ft, h, fh, w, fw).sum(axis=(2, 4, 6)))

    return _from_op(data, (x,), bwd)


_KERNEL_CACHE = {}


def gaussian_kernel1d(sigma: float, dtype=np.float32) -> np.ndarray:
    """Normalized Gaussian taps with radius ceil(3*sigma)."""
    key = (float(sigma), np.dtype(dtype).str)
    hit = _KERNEL_CACHE.get(key)
    if hit is not None:
        return hit
    if sigma <= 0:
        raise ShapeError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    i = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (i / sigma) ** 2).astype(dtype)
    k /= k.sum()
    _KERNEL_CACHE[key] = k
    return k


def gaussian_blur2d(x: Tensor, sigma: float) -> Tensor:
    """Separable Gaussian blur of [C,H,W] with reflect padding."""
    if x.ndim != 3:
        raise ShapeError(f"blur input must be [C,H,W], got {x.shape}")
    k = gaussian_kernel1d(sigma, x.dtype)
    r = (len(k) - 1) // 2
    if min(x.shape[1], x.shape[2]) <= r:
        raise ShapeError(
            f"blur with sigma {sigma} needs spatial extent > {r}, got "
            f"{x.shape[1]}x{x.shape[2]}")
    kern = backend.active()
    data = kern.blur2d(np.ascontiguousarray(x.data), k)

    def bwd(g):
        _accum(x, kern.blur2d_adjoint(np.ascontiguousarray(g), k))

    return _from_op(data, (x,), bwd)


def scale_space_warp(pyramid: Tensor, motion: Tensor) -> Tensor:
    """Sample a scale pyramid [S,C,H,W] at motion-offset coordinates.

    motion is [3,H,W]: horizontal flow, vertical flow, raw scale. The
    scale channel is clamped to [0,1] inside the kernel and spread over
    the S-1 level gaps; spatial samples clamp to the border. Zero motion
    reproduces level 0 bit for bit.
    """
    if pyramid.ndim != 4:
        raise ShapeError(f"pyramid must be [S,C,H,W], got {pyramid.shape}")
    if motion.ndim != 3 or motion.shape[0] != 3:
        raise ShapeError(f"motion must be [3,H,W], got {motion.shape}")
    if pyramid.shape[2:] != motion.shape[1:]:
        raise ShapeError(
            f"spatial mismatch: pyramid {pyramid.shape[2:]} vs motion "
            f"{motion.shape[1:]}")
    if pyramid.shape[0] < 2 or min(pyramid.shape[2], pyramid.shape[3]) < 2:
        raise ShapeError(f"pyramid too small to sample: {pyramid.shape}")
    if pyramid.dtype != motion.dtype:
        raise ShapeError(f"dtype mismatch: {pyramid.dtype} vs {motion.dtype}")
    kern = backend.active()
    pd = np.ascontiguousarray(pyramid.data)
    md = np.ascontiguousarray(motion.data)
    data = kern.warp_forward(pd, md)

    def bwd(g):
        gpyr, gmot = kern.warp_backward(pd, md, np.ascontiguousarray(g))
        _accum(pyramid, gpyr)
        _accum(motion, gmot)

    return _from_op(data, (pyramid, motion), bwd)
