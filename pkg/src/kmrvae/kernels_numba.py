"""Numba jit kernels.

Default execution path. The convolution kernels gather patches with
explicit loops (im2col) and hand the contraction to BLAS through np.dot;
blur and warp are straight loop nests. Everything runs single threaded so
results are reproducible without any thread-count caveats.

Call signatures mirror kernels_numpy exactly.
"""

import math

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def conv3d_forward(xp, w, st, sh, sw):
    co, ci, kt, kh, kw = w.shape
    _, tp, hp, wp = xp.shape
    to = (tp - kt) // st + 1
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    n = to * ho * wo
    ck = ci * kt * kh * kw
    col = np.empty((ck, n), dtype=xp.dtype)
    for c in range(ci):
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    row = ((c * kt + i) * kh + j) * kw + k
                    idx = 0
                    for t in range(to):
                        tt = t * st + i
                        for y in range(ho):
                            yy = y * sh + j
                            for x in range(wo):
                                col[row, idx] = xp[c, tt, yy, x * sw + k]
                                idx += 1
    w2d = w.reshape(co, ck)
    out2 = np.dot(w2d, col)
    return out2.reshape(co, to, ho, wo)


@njit(cache=True)
def conv3d_bwd_input(w, gout, tp, hp, wp, st, sh, sw):
    co, ci, kt, kh, kw = w.shape
    _, to, ho, wo = gout.shape
    n = to * ho * wo
    ck = ci * kt * kh * kw
    wt = w.reshape(co, ck).T.copy()
    g2 = gout.reshape(co, n)
    gcol = np.dot(wt, g2)
    gxp = np.zeros((ci, tp, hp, wp), dtype=gout.dtype)
    for c in range(ci):
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    row = ((c * kt + i) * kh + j) * kw + k
                    idx = 0
                    for t in range(to):
                        tt = t * st + i
                        for y in range(ho):
                            yy = y * sh + j
                            for x in range(wo):
                                gxp[c, tt, yy, x * sw + k] += gcol[row, idx]
                                idx += 1
    return gxp


@njit(cache=True)
def conv3d_bwd_weight(xp, gout, kt, kh, kw, st, sh, sw):
    ci, tp, hp, wp = xp.shape
    co, to, ho, wo = gout.shape
    n = to * ho * wo
    ck = ci * kt * kh * kw
    colt = np.empty((n, ck), dtype=xp.dtype)
    for c in range(ci):
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    row = ((c * kt + i) * kh + j) * kw + k
                    idx = 0
                    for t in range(to):
                        tt = t * st + i
                        for y in range(ho):
                            yy = y * sh + j
                            for x in range(wo):
                                colt[idx, row] = xp[c, tt, yy, x * sw + k]
                                idx += 1
    g2 = gout.reshape(co, n)
    gw2 = np.dot(g2, colt)
    return gw2.reshape(co, ci, kt, kh, kw)


@njit(cache=True)
def _refl(i, n):
    if n == 1:
        return 0
    m = 2 * n - 2
    i = i % m
    if i >= n:
        i = m - i
    return i


@njit(cache=True)
def blur2d(x, k):
    c, h, w = x.shape
    kn = k.shape[0]
    r = (kn - 1) // 2
    tmp = np.empty_like(x)
    out = np.empty_like(x)
    for ci in range(c):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for i in range(kn):
                    acc += k[i] * x[ci, y, _refl(xx + i - r, w)]
                tmp[ci, y, xx] = acc
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for i in range(kn):
                    acc += k[i] * tmp[ci, _refl(y + i - r, h), xx]
                out[ci, y, xx] = acc
    return out


@njit(cache=True)
def blur2d_adjoint(g, k):
    c, h, w = g.shape
    kn = k.shape[0]
    r = (kn - 1) // 2
    tmp = np.zeros_like(g)
    gx = np.zeros_like(g)
    for ci in range(c):
        for y in range(h):
            for xx in range(w):
                gv = g[ci, y, xx]
                for i in range(kn):
                    tmp[ci, _refl(y + i - r, h), xx] += k[i] * gv
        for y in range(h):
            for xx in range(w):
                gv = tmp[ci, y, xx]
                for i in range(kn):
                    gx[ci, y, _refl(xx + i - r, w)] += k[i] * gv
    return gx


@njit(cache=True)
def warp_forward(pyr, mot):
    s_levels, c, h, w = pyr.shape
    out = np.empty((c, h, w), dtype=pyr.dtype)
    for y in range(h):
        for x in range(w):
            fx = mot[0, y, x]
            fy = mot[1, y, x]
            sc = mot[2, y, x]
            if sc < 0.0:
                sc = 0.0
            elif sc > 1.0:
                sc = 1.0
            s = sc * (s_levels - 1)
            cx = x + fx
            if cx < 0.0:
                cx = 0.0
            elif cx > w - 1:
                cx = float(w - 1)
            cy = y + fy
            if cy < 0.0:
                cy = 0.0
            elif cy > h - 1:
                cy = float(h - 1)
            # NaN coordinates cast to a huge negative int; clamping both
            # ends keeps the reads in range and the NaN weights poison the
            # result instead of indexing wild memory
            x0 = int(math.floor(cx))
            if x0 > w - 2:
                x0 = w - 2
            if x0 < 0:
                x0 = 0
            y0 = int(math.floor(cy))
            if y0 > h - 2:
                y0 = h - 2
            if y0 < 0:
                y0 = 0
            s0 = int(s)
            if s0 > s_levels - 2:
                s0 = s_levels - 2
            if s0 < 0:
                s0 = 0
            wx = cx - x0
            wy = cy - y0
            ws = s - s0
            for cc in range(c):
                b0 = (pyr[s0, cc, y0, x0] * (1.0 - wy) * (1.0 - wx)
                      + pyr[s0, cc, y0, x0 + 1] * (1.0 - wy) * wx
                      + pyr[s0, cc, y0 + 1, x0] * wy * (1.0 - wx)
                      + pyr[s0, cc, y0 + 1, x0 + 1] * wy * wx)
                b1 = (pyr[s0 + 1, cc, y0, x0] * (1.0 - wy) * (1.0 - wx)
                      + pyr[s0 + 1, cc, y0, x0 + 1] * (1.0 - wy) * wx
                      + pyr[s0 + 1, cc, y0 + 1, x0] * wy * (1.0 - wx)
                      + pyr[s0 + 1, cc, y0 + 1, x0 + 1] * wy * wx)
                out[cc, y, x] = b0 * (1.0 - ws) + b1 * ws
    return out


@njit(cache=True)
def warp_backward(pyr, mot, gout):
    s_levels, c, h, w = pyr.shape
    gpyr = np.zeros_like(pyr)
    gmot = np.zeros_like(mot)
    for y in range(h):
        for x in range(w):
            fx = mot[0, y, x]
            fy = mot[1, y, x]
            scraw = mot[2, y, x]
            rawx = x + fx
            rawy = y + fy
            mask_x = 1.0 if (rawx >= 0.0 and rawx <= w - 1) else 0.0
            mask_y = 1.0 if (rawy >= 0.0 and rawy <= h - 1) else 0.0
            mask_s = 1.0 if (scraw >= 0.0 and scraw <= 1.0) else 0.0
            sc = scraw
            if sc < 0.0:
                sc = 0.0
            elif sc > 1.0:
                sc = 1.0
            s = sc * (s_levels - 1)
            cx = rawx
            if cx < 0.0:
                cx = 0.0
            elif cx > w - 1:
                cx = float(w - 1)
            cy = rawy
            if cy < 0.0:
                cy = 0.0
            elif cy > h - 1:
                cy = float(h - 1)
            # NaN coordinates cast to a huge negative int; clamping both
            # ends keeps the reads in range and the NaN weights poison the
            # result instead of indexing wild memory
            x0 = int(math.floor(cx))
            if x0 > w - 2:
                x0 = w - 2
            if x0 < 0:
                x0 = 0
            y0 = int(math.floor(cy))
            if y0 > h - 2:
                y0 = h - 2
            if y0 < 0:
                y0 = 0
            s0 = int(s)
            if s0 > s_levels - 2:
                s0 = s_levels - 2
            if s0 < 0:
                s0 = 0
            wx = cx - x0
            wy = cy - y0
            ws = s - s0
            a00 = (1.0 - wy) * (1.0 - wx)
            a01 = (1.0 - wy) * wx
            a10 = wy * (1.0 - wx)
            a11 = wy * wx
            accx = 0.0
            accy = 0.0
            accs = 0.0
            for cc in range(c):
                g = gout[cc, y, x]
                p00a = pyr[s0, cc, y0, x0]
                p01a = pyr[s0, cc, y0, x0 + 1]
                p10a = pyr[s0, cc, y0 + 1, x0]
                p11a = pyr[s0, cc, y0 + 1, x0 + 1]
                p00b = pyr[s0 + 1, cc, y0, x0]
                p01b = pyr[s0 + 1, cc, y0, x0 + 1]
                p10b = pyr[s0 + 1, cc, y0 + 1, x0]
                p11b = pyr[s0 + 1, cc, y0 + 1, x0 + 1]
                gpyr[s0, cc, y0, x0] += g * (1.0 - ws) * a00
                gpyr[s0, cc, y0, x0 + 1] += g * (1.0 - ws) * a01
                gpyr[s0, cc, y0 + 1, x0] += g * (1.0 - ws) * a10
                gpyr[s0, cc, y0 + 1, x0 + 1] += g * (1.0 - ws) * a11
                gpyr[s0 + 1, cc, y0, x0] += g * ws * a00
                gpyr[s0 + 1, cc, y0, x0 + 1] += g * ws * a01
                gpyr[s0 + 1, cc, y0 + 1, x0] += g * ws * a10
                gpyr[s0 + 1, cc, y0 + 1, x0 + 1] += g * ws * a11
                dxa = (1.0 - wy) * (p01a - p00a) + wy * (p11a - p10a)
                dxb = (1.0 - wy) * (p01b - p00b) + wy * (p11b - p10b)
                dya = (1.0 - wx) * (p10a - p00a) + wx * (p11a - p01a)
                dyb = (1.0 - wx) * (p10b - p00b) + wx * (p11b - p01b)
                b0 = p00a * a00 + p01a * a01 + p10a * a10 + p11a * a11
                b1 = p00b * a00 + p01b * a01 + p10b * a10 + p11b * a11
                accx += g * ((1.0 - ws) * dxa + ws * dxb)
                accy += g * ((1.0 - ws) * dya + ws * dyb)
                accs += g * (b1 - b0)
            gmot[0, y, x] = accx * mask_x
            gmot[1, y, x] = accy * mask_y
            gmot[2, y, x] = accs * mask_s * (s_levels - 1)
    return gpyr, gmot
