"""Pure numpy kernels.

Fallback path used when numba is unavailable or when KMRVAE_KERNELS=numpy.
Same call signatures as kernels_numba; convolution contractions are routed
through BLAS (tensordot), sampling and scatter steps use vectorized
index arithmetic.

All functions accept float32 or float64 arrays and preserve the dtype.
Convolution inputs arrive already zero-padded, stride handling is the
kernel's job.
"""

import numpy as np

NAME = "numpy"


def conv3d_forward(xp, w, st, sh, sw):
    """Correlate padded input [C,Tp,Hp,Wp] with w [Co,Ci,kT,kH,kW]."""
    co, ci, kt, kh, kw = w.shape
    _, tp, hp, wp = xp.shape
    to = (tp - kt) // st + 1
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    out = np.zeros((co, to, ho, wo), dtype=xp.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                win = xp[:, i:i + st * to:st, j:j + sh * ho:sh, k:k + sw * wo:sw]
                out += np.tensordot(w[:, :, i, j, k], win, axes=(1, 0))
    return out


def conv3d_bwd_input(w, gout, tp, hp, wp, st, sh, sw):
    """Gradient wrt the padded input; scatter per kernel tap."""
    co, ci, kt, kh, kw = w.shape
    _, to, ho, wo = gout.shape
    gxp = np.zeros((ci, tp, hp, wp), dtype=gout.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                g = np.tensordot(w[:, :, i, j, k], gout, axes=(0, 0))
                gxp[:, i:i + st * to:st, j:j + sh * ho:sh, k:k + sw * wo:sw] += g
    return gxp


def conv3d_bwd_weight(xp, gout, kt, kh, kw, st, sh, sw):
    """Gradient wrt the kernel weights."""
    ci, tp, hp, wp = xp.shape
    co, to, ho, wo = gout.shape
    gw = np.zeros((co, ci, kt, kh, kw), dtype=gout.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                win = xp[:, i:i + st * to:st, j:j + sh * ho:sh, k:k + sw * wo:sw]
                gw[:, :, i, j, k] = np.tensordot(gout, win, axes=([1, 2, 3], [1, 2, 3]))
    return gw


def _reflect_indices(n, r):
    # np.pad(mode="reflect") convention, no edge repeat
    p = np.arange(-r, n + r)
    if n == 1:
        return np.zeros_like(p)
    m = 2 * n - 2
    i = np.mod(p, m)
    return np.where(i >= n, m - i, i)


def _corr_last(x, k):
    r = (len(k) - 1) // 2
    pads = [(0, 0)] * (x.ndim - 1) + [(r, r)]
    xp = np.pad(x, pads, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, len(k), axis=-1)
    return win @ k


def _corr_adj_last(g, k):
    # adjoint of reflect-pad followed by valid correlation, last axis
    r = (len(k) - 1) // 2
    n = g.shape[-1]
    pads = [(0, 0)] * (g.ndim - 1) + [(2 * r, 2 * r)]
    gz = np.pad(g, pads, mode="constant")
    win = np.lib.stride_tricks.sliding_window_view(gz, len(k), axis=-1)
    gxp = win @ k[::-1].copy()
    src = _reflect_indices(n, r)
    lead = gxp.shape[:-1]
    gxp2 = gxp.reshape(-1, n + 2 * r)
    gx2 = np.zeros((gxp2.shape[0], n), dtype=g.dtype)
    rows = np.arange(gxp2.shape[0])[:, None]
    np.add.at(gx2, (rows, src[None, :]), gxp2)
    return gx2.reshape(lead + (n,))


def blur2d(x, k):
    """Separable correlation of [C,H,W] with 1-d kernel k, reflect padding."""
    k = k.astype(x.dtype, copy=False)
    tmp = _corr_last(x, k)
    out = _corr_last(np.swapaxes(tmp, 1, 2), k)
    return np.ascontiguousarray(np.swapaxes(out, 1, 2))


def blur2d_adjoint(g, k):
    """Transpose of blur2d (column pass adjoint first, then row pass)."""
    k = k.astype(g.dtype, copy=False)
    tmp = _corr_adj_last(np.swapaxes(g, 1, 2), k)
    gx = _corr_adj_last(np.swapaxes(tmp, 1, 2), k)
    return np.ascontiguousarray(gx)


def _warp_coords(pyr, mot):
    s_levels, _, h, w = pyr.shape
    dt = pyr.dtype
    fx, fy, sc = mot[0], mot[1], mot[2]
    rawx = np.arange(w, dtype=dt)[None, :] + fx
    rawy = np.arange(h, dtype=dt)[:, None] + fy
    raws = np.clip(sc, dt.type(0), dt.type(1)) * dt.type(s_levels - 1)
    cx = np.clip(rawx, 0, w - 1)
    cy = np.clip(rawy, 0, h - 1)
    # NaN coordinates cast to INT64_MIN; the lower clamp keeps indexing
    # in range and the NaN lerp weight then poisons the output honestly
    with np.errstate(invalid="ignore"):
        x0 = np.clip(np.floor(cx).astype(np.int64), 0, w - 2)
        y0 = np.clip(np.floor(cy).astype(np.int64), 0, h - 2)
        s0 = np.clip(raws.astype(np.int64), 0, s_levels - 2)
    # int64 minus float32 would promote to float64; keep the pyramid dtype
    wx = (cx - x0).astype(dt, copy=False)
    wy = (cy - y0).astype(dt, copy=False)
    ws = (raws - s0).astype(dt, copy=False)
    return rawx, rawy, sc, x0, y0, s0, wx, wy, ws


def warp_forward(pyr, mot):
    """Trilinear sample of pyramid [S,C,H,W] at motion-offset coordinates.

    Spatial samples clamp to the border, the scale channel is clamped to
    [0,1] then stretched across the S-1 level gaps.
    """
    _, _, h, w = pyr.shape
    _, _, _, x0, y0, s0, wx, wy, ws = _warp_coords(pyr, mot)
    out = None
    for ds, wgt_s in ((0, 1 - ws), (1, ws)):
        lvl = s0 + ds
        p00 = pyr[lvl, :, y0, x0 + 0]
        p01 = pyr[lvl, :, y0, np.minimum(x0 + 1, w - 1)]
        p10 = pyr[lvl, :, np.minimum(y0 + 1, h - 1), x0]
        p11 = pyr[lvl, :, np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)]
        a = (1 - wy) * (1 - wx)
        b = (1 - wy) * wx
        c = wy * (1 - wx)
        d = wy * wx
        bil = (p00 * a[..., None] + p01 * b[..., None]
               + p10 * c[..., None] + p11 * d[..., None])
        term = bil * wgt_s[..., None]
        out = term if out is None else out + term
    return np.ascontiguousarray(np.moveaxis(out, -1, 0))


def warp_backward(pyr, mot, gout):
    """Gradients of warp_forward wrt pyramid and motion tensor.

    Border-clamped spatial samples and scale values outside [0,1] get zero
    motion gradient; the closed interval keeps its one-sided gradient.
    """
    s_levels, ch, h, w = pyr.shape
    dt = pyr.dtype
    rawx, rawy, sc, x0, y0, s0, wx, wy, ws = _warp_coords(pyr, mot)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    g_hwc = np.moveaxis(gout, 0, -1)

    mask_x = ((rawx >= 0) & (rawx <= w - 1)).astype(dt)
    mask_y = ((rawy >= 0) & (rawy <= h - 1)).astype(dt)
    mask_s = ((sc >= 0) & (sc <= 1)).astype(dt) * dt.type(s_levels - 1)

    gpyr = np.zeros_like(pyr).reshape(-1)
    gmot = np.zeros_like(mot)
    dvdx = np.zeros((h, w), dtype=dt)
    dvdy = np.zeros((h, w), dtype=dt)
    dvds = np.zeros((h, w), dtype=dt)

    corner_w = {
        (0, 0): (1 - wy) * (1 - wx), (0, 1): (1 - wy) * wx,
        (1, 0): wy * (1 - wx), (1, 1): wy * wx,
    }
    for ds, wgt_s, sgn_s in ((0, 1 - ws, -1), (1, ws, 1)):
        lvl = s0 + ds
        pc = {}
        for (iy, ix) in corner_w:
            yy = y0 if iy == 0 else y1
            xx = x0 if ix == 0 else x1
            pc[(iy, ix)] = pyr[lvl, :, yy, xx]
            lin = ((lvl * ch + np.arange(ch)[:, None, None]) * h + yy) * w + xx
            np.add.at(gpyr, lin.reshape(ch, -1),
                      (g_hwc * (wgt_s * corner_w[(iy, ix)])[..., None])
                      .reshape(-1, ch).T)
        dx_l = ((1 - wy)[..., None] * (pc[(0, 1)] - pc[(0, 0)])
                + wy[..., None] * (pc[(1, 1)] - pc[(1, 0)]))
        dy_l = ((1 - wx)[..., None] * (pc[(1, 0)] - pc[(0, 0)])
                + wx[..., None] * (pc[(1, 1)] - pc[(0, 1)]))
        bil = (pc[(0, 0)] * corner_w[(0, 0)][..., None]
               + pc[(0, 1)] * corner_w[(0, 1)][..., None]
               + pc[(1, 0)] * corner_w[(1, 0)][..., None]
               + pc[(1, 1)] * corner_w[(1, 1)][..., None])
        dvdx += np.einsum("hwc,hwc->hw", g_hwc, dx_l) * wgt_s
        dvdy += np.einsum("hwc,hwc->hw", g_hwc, dy_l) * wgt_s
        dvds += np.einsum("hwc,hwc->hw", g_hwc, bil) * dt.type(sgn_s)

    gmot[0] = dvdx * mask_x
    gmot[1] = dvdy * mask_y
    gmot[2] = dvds * mask_s
    return gpyr.reshape(pyr.shape), gmot
