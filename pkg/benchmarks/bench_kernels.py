"""Compare the jit and plain-numpy kernel backends on the shapes the
trainer actually hits.

Run as `python3 benchmarks/bench_kernels.py [--repeat N]`. Prints one
line per (op, shape) with both timings and the speedup, then a full
training-step comparison. The jit path pays compilation once up front;
that cost is excluded by a warm-up call per kernel.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from kmrvae import backend
from kmrvae import kernels_numpy


def _time(fn, repeat):
    fn()  # warm-up: jit compilation, cache effects
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _conv_cases():
    # encoder stem and first downsample at acceptance scale, plus the
    # motion net's per-frame convolution
    yield "conv3d 3->8 k333 s111", (3, 8, 32, 32), (8, 3, 3, 3, 3), (1, 1, 1)
    yield "conv3d 8->16 k333 s222", (8, 8, 32, 32), (16, 8, 3, 3, 3), (2, 2, 2)
    yield "conv3d 6->32 k133 s111", (6, 8, 32, 32), (32, 6, 1, 3, 3), (1, 1, 1)


def bench_kernels(repeat):
    if not backend.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    from kmrvae import kernels_numba

    rng = np.random.default_rng(0)
    rows = []
    for label, xs, ws, stride in _conv_cases():
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        pad = tuple(k // 2 for k in ws[2:])
        xp = np.pad(x, ((0, 0),) + tuple((p, p) for p in pad))
        a = _time(lambda: kernels_numpy.conv3d_forward(xp, w, *stride), repeat)
        b = _time(lambda: kernels_numba.conv3d_forward(xp, w, *stride), repeat)
        rows.append((label, a, b))
        g = kernels_numba.conv3d_forward(xp, w, *stride)
        gout = rng.standard_normal(g.shape).astype(np.float32)
        a = _time(lambda: kernels_numpy.conv3d_bwd_weight(
            xp, gout, *ws[2:], *stride), repeat)
        b = _time(lambda: kernels_numba.conv3d_bwd_weight(
            xp, gout, *ws[2:], *stride), repeat)
        rows.append((label + " bwd_w", a, b))

    pyr = rng.standard_normal((4, 3, 32, 32)).astype(np.float32)
    mot = (rng.standard_normal((3, 32, 32)) * 2).astype(np.float32)
    gout = rng.standard_normal((3, 32, 32)).astype(np.float32)
    rows.append(("warp fwd 32x32",
                 _time(lambda: kernels_numpy.warp_forward(pyr, mot), repeat),
                 _time(lambda: kernels_numba.warp_forward(pyr, mot), repeat)))
    rows.append(("warp bwd 32x32",
                 _time(lambda: kernels_numpy.warp_backward(pyr, mot, gout),
                       repeat),
                 _time(lambda: kernels_numba.warp_backward(pyr, mot, gout),
                       repeat)))
    return rows


def bench_train_step(steps):
    """Marginal cost of one optimizer step at acceptance scale.

    Runs each backend twice in a subprocess (the backend is fixed at
    import time from KMRVAE_KERNELS): once for 1 VAE step and once for
    1+steps. The difference isolates the per-step cost from evaluation,
    warm-up, jit-cache loading and the component cache build."""
    import os
    import subprocess
    import sys

    script_tmpl = (
        "import time\n"
        "from kmrvae import config, videoio\n"
        "from kmrvae.train import Trainer\n"
        "values = dict(config.DEFAULTS)\n"
        "values.update(num_clips=4, holdout_clips=1, frames=8, height=32,\n"
        "              width=32, c_lo=8, c_hi=16, batch_size=1,\n"
        "              phase0_steps=1, phase1_steps={n}, phase2_steps=0,\n"
        "              adv_start_step=10**6)\n"
        "cfg = config.Config(values)\n"
        "clips = [s.video for s in videoio.synthesize_dataset(\n"
        "    0, 4, 8, 32, 32)]\n"
        "tr = Trainer(cfg, clips)\n"
        "t0 = time.time()\n"
        "tr.run()\n"
        "print(time.time() - t0)\n"
    )
    env = dict(os.environ)
    out = {}
    for mode in ("numpy", "numba"):
        env["KMRVAE_KERNELS"] = mode
        times = {}
        for n in (1, 1 + steps):
            proc = subprocess.run(
                [sys.executable, "-c", script_tmpl.format(n=n)],
                capture_output=True, text=True, env=env)
            if proc.returncode != 0:
                raise SystemExit(
                    f"{mode} step benchmark failed:\n{proc.stderr}")
            times[n] = float(proc.stdout.strip().splitlines()[-1])
        out[mode] = (times[1 + steps] - times[1]) / steps
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-train-step", action="store_true")
    args = ap.parse_args()

    rows = bench_kernels(args.repeat)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>9}  {'numba':>9}  speedup")
    for label, a, b in rows:
        print(f"{label:<{width}}  {a * 1e3:8.2f}ms  {b * 1e3:8.2f}ms  "
              f"{a / b:6.1f}x")

    if not args.skip_train_step:
        step = bench_train_step(max(args.repeat, 5))
        print(f"\nmarginal train step (32x32x8, widths 8/16, batch 1): "
              f"numpy {step['numpy']:.2f}s  numba {step['numba']:.2f}s  "
              f"{step['numpy'] / step['numba']:.1f}x")


if __name__ == "__main__":
    main()
