"""Finite-difference verification of backward passes.

The checker runs every op in float64 shadow precision with central
differences, step h = 1e-5, and accepts a maximum relative error of
1e-4. Relative error per element is

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

Inputs are sampled away from kinks: leaky_relu activations are pushed
off zero, warp flows carry a quarter-pixel offset so no sampling
coordinate sits on a cell boundary, and scale values stay strictly
inside the clamp interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

H_STEP = 1e-5
TOLERANCE = 1e-4
_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    per_input: list = field(default_factory=list)
    nonfinite: list = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return not self.nonfinite and self.max_rel_error <= self.tolerance

    def __str__(self):
        state = "pass" if self.ok else "FAIL"
        detail = " ".join(f"{n}={e:.3e}" for n, e in self.per_input)
        extra = f" nonfinite={self.nonfinite}" if self.nonfinite else ""
        return (f"{self.op_name}: {state} max_rel={self.max_rel_error:.3e} "
                f"tol={self.tolerance:.0e} [{detail}]{extra}")


def grad_check(op_name: str, fn, inputs: dict, seed: int = 0,
               h: float = H_STEP, tol: float = TOLERANCE) -> GradCheckReport:
    """Compare analytic gradients of fn(**inputs) against central differences.

    fn maps named Tensors to a single output Tensor; the output is reduced
    to a scalar through a fixed random projection so the full Jacobian is
    exercised. Every element of every input is perturbed.
    """
    rng = np.random.default_rng(seed)
    tens = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
            for k, v in inputs.items()}
    out = fn(**tens)
    proj = Tensor(rng.standard_normal(out.shape))
    loss = ad.sum(ad.mul(out, proj))
    loss.backward()

    def forward_scalar():
        with ad.no_grad():
            o = fn(**{k: Tensor(t.data) for k, t in tens.items()})
            return float((o.data * proj.data).sum())

    report = GradCheckReport(op_name, 0.0)
    for name, t in tens.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(analytic)):
            report.nonfinite.append(name)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = forward_scalar()
            flat[i] = keep - h
            fm = forward_scalar()
            flat[i] = keep
            nflat[i] = (fp - fm) / (2 * h)
        if not np.all(np.isfinite(numeric)):
            report.nonfinite.append(name + ":numeric")
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _FLOOR)
        err = float((np.abs(analytic - numeric) / denom).max()) if flat.size else 0.0
        report.per_input.append((name, err))
        report.max_rel_error = max(report.max_rel_error, err)
    return report


def _offset_from_zero(x, margin=0.1):
    return x + np.sign(x + 1e-12) * margin


def standard_checks(seed: int = 0):
    """Build the registered op checks; yields (name, callable)."""
    rng = np.random.default_rng(seed)

    def elementwise(name, fn, data):
        return name, lambda: grad_check(name, lambda x: fn(x), {"x": data}, seed=seed)

    x34 = rng.standard_normal((3, 4))
    c_add = rng.standard_normal((3, 4))
    c_sub = rng.standard_normal((3, 4))
    c_mul = rng.standard_normal((3, 4))
    yield elementwise("add", lambda x: ad.add(x, Tensor(c_add)), x34)
    yield elementwise("sub", lambda x: ad.sub(Tensor(c_sub), x), x34)
    yield elementwise("mul", lambda x: ad.mul(x, Tensor(c_mul)), x34)
    yield elementwise("exp", ad.exp, rng.standard_normal((3, 4)) * 0.5)
    yield elementwise("log", ad.log, rng.random((3, 4)) + 0.5)
    yield elementwise("softplus", ad.softplus, rng.standard_normal((3, 4)) * 2)
    yield elementwise("abs", ad.absolute, _offset_from_zero(rng.standard_normal((3, 4))))
    yield elementwise("square", ad.square, rng.standard_normal((3, 4)))
    yield elementwise("leaky_relu",
                      lambda x: ad.leaky_relu(x, 0.2),
                      _offset_from_zero(rng.standard_normal((3, 4))))
    yield elementwise("clamp",
                      lambda x: ad.clamp(x, 0.0, 1.0),
                      np.concatenate([rng.random(6) * 0.8 + 0.1,
                                      rng.random(3) + 1.1, -rng.random(3) - 0.1]))
    yield elementwise("mean", lambda x: ad.mean(x, axis=1), rng.standard_normal((3, 4)))
    yield elementwise("sum", lambda x: ad.sum(x, axis=0), rng.standard_normal((3, 4)))

    def conv_check(name, stride, padding):
        x = rng.standard_normal((2, 3, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3, 3)) * 0.5
        b = rng.standard_normal(3)
        return name, lambda: grad_check(
            name, lambda x, w, b: ad.conv3d(x, w, b, stride=stride, padding=padding),
            {"x": x, "w": w, "b": b}, seed=seed)

    yield conv_check("conv3d_s1", 1, 1)
    yield conv_check("conv3d_s2", (2, 2, 2), 1)
    yield conv_check("conv3d_s122", (1, 2, 2), (0, 1, 1))

    yield ("upsample_nearest",
           lambda: grad_check("upsample_nearest",
                              lambda x: ad.upsample_nearest(x, (2, 2, 2)),
                              {"x": rng.standard_normal((2, 2, 3, 3))}, seed=seed))

    yield ("gaussian_blur2d",
           lambda: grad_check("gaussian_blur2d",
                              lambda x: ad.gaussian_blur2d(x, 1.0),
                              {"x": rng.standard_normal((2, 6, 6))}, seed=seed))

    def warp_inputs():
        pyr = rng.random((4, 2, 8, 8))
        flow = (rng.random((2, 8, 8)) - 0.5) * 2.0 + 0.25
        scale = rng.random((1, 8, 8)) * 0.23 + 0.05
        return pyr, np.concatenate([flow, scale], axis=0)

    pyr, mot = warp_inputs()
    yield ("scale_space_warp",
           lambda: grad_check("scale_space_warp", ad.scale_space_warp,
                              {"pyramid": pyr, "motion": mot}, seed=seed))

    eps_arr = rng.standard_normal((4, 2, 2))

    def reparam(mu, log_var):
        eps = Tensor(np.asarray(eps_arr, dtype=np.float64))
        half = ad.mul(log_var, 0.5)
        return ad.add(mu, ad.mul(ad.exp(half), eps))

    yield ("reparameterize",
           lambda: grad_check("reparameterize", reparam,
                              {"mu": rng.standard_normal((4, 2, 2)),
                               "log_var": rng.standard_normal((4, 2, 2)) * 0.5},
                              seed=seed))

    def kl(mu, log_var):
        return ad.mul(ad.mean(ad.sub(ad.add(ad.square(mu), ad.exp(log_var)),
                                     ad.add(log_var, 1.0))), 0.5)

    yield ("kl_loss",
           lambda: grad_check("kl_loss", kl,
                              {"mu": rng.standard_normal((4, 2, 2)),
                               "log_var": rng.standard_normal((4, 2, 2)) * 0.5},
                              seed=seed))


def run_standard_checks(seed: int = 0):
    """Run every registered check; returns the list of reports."""
    return [build() for _, build in standard_checks(seed)]
