"""Adam with bias correction, freeze sets and global-norm clipping.

One AdamState owns one family of parameters (the generator side and the
discriminator get separate states). Moments are created lazily the first
time a parameter receives a gradient; the step counter is global to the
state, so a parameter that joins late (unfrozen in a later phase) sees a
slightly damped first update instead of the full bias-corrected one.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError, TrainingAborted

LEARNING_RATE = 5e-5
BETA1 = 0.5
BETA2 = 0.9
EPS = 1e-8


class AdamState:
    def __init__(self, lr: float = LEARNING_RATE, beta1: float = BETA1,
                 beta2: float = BETA2, eps: float = EPS):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def zero_grad(params: dict) -> None:
    for t in params.values():
        t.grad = None


def clip_global_norm(params: dict, max_norm: float,
                     freeze: frozenset = frozenset()) -> float:
    """Scale every live gradient so their joint L2 norm is <= max_norm.

    Returns the pre-clip norm. Gradients are replaced, never mutated in
    place, because a gradient array may be shared with another node.
    """
    total = 0.0
    live = []
    for name, t in params.items():
        if t.grad is None or _is_frozen(name, freeze):
            continue
        g = t.grad
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient in {name!r}", -1)
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
        live.append(t)
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = np.float32(max_norm / norm)
        for t in live:
            t.grad = t.grad * scale
    return norm


def _is_frozen(name: str, freeze) -> bool:
    """A freeze entry blocks a parameter when it names the parameter
    itself or a dotted prefix of it (freezing 'encoder_k' freezes
    'encoder_k.stem.weight')."""
    for f in freeze:
        if name == f or name.startswith(f + "."):
            return True
    return False


def adam_step(params: dict, state: AdamState,
              freeze: frozenset = frozenset()) -> None:
    """One Adam update over every parameter that carries a gradient.

    Frozen parameters are skipped entirely: values, moments, everything
    about them stays bitwise identical. Parameters without a gradient
    this step are also left alone (their moments do not decay).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None or _is_frozen(name, freeze):
            continue
        g = p.grad
        if g.shape != p.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient in {name!r}", t)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m.astype(p.data.dtype, copy=False)
        state.v[name] = v.astype(p.data.dtype, copy=False)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
                  ).astype(p.data.dtype, copy=False)
