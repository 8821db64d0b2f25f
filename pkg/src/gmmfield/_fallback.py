"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Signatures and return types match the extension. Kernels are accumulated in
index order so value sums round the same way as the compiled loop.
"""
from __future__ import annotations

import numpy as np


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _smoothstep_deriv(t):
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


def _accumulate(params, pts, cutoff, val, grad):
    for k in range(params.shape[0]):
        w, mx, my, mz, lx, ly, lz = params[k]
        inv = np.array([1.0 / (lx * lx), 1.0 / (ly * ly), 1.0 / (lz * lz)])
        d = pts - np.array([mx, my, mz])
        e = -0.5 * (d[:, 0] * d[:, 0] * inv[0] + d[:, 1] * d[:, 1] * inv[1] + d[:, 2] * d[:, 2] * inv[2])
        live = e > -cutoff
        if not live.any():
            continue
        g = np.zeros(len(pts))
        g[live] = w * np.exp(e[live])
        val += g
        grad -= g[:, None] * d * inv


def mixture_eval(params, pts, cutoff):
    params = np.ascontiguousarray(params, dtype=float)
    pts = np.ascontiguousarray(pts, dtype=float)
    val = np.zeros(len(pts))
    grad = np.zeros((len(pts), 3))
    _accumulate(params, pts, cutoff, val, grad)
    return val, grad


def mixture_jacobian(params, pts, cutoff):
    params = np.asarray(params, dtype=float)
    pts = np.asarray(pts, dtype=float)
    n, nk = len(pts), len(params)
    val = np.zeros(n)
    jac = np.zeros((n, 7 * nk))
    for k in range(nk):
        w = params[k, 0]
        inv = 1.0 / params[k, 4:7] ** 2
        d = pts - params[k, 1:4]
        e = -0.5 * (d * d * inv).sum(axis=1)
        ex = np.where(e > -cutoff, np.exp(np.maximum(e, -cutoff)), 0.0)
        g = w * ex
        val += g
        c = 7 * k
        jac[:, c] = ex
        jac[:, c + 1 : c + 4] = g[:, None] * d * inv
        jac[:, c + 4 : c + 7] = g[:, None] * d * d * inv
    return val, jac


def blend_eval(pts, slots, origins, kstart, params, block_size, delta, cutoff):
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    width = 2.0 * delta
    wsum = np.zeros(n)
    vsum = np.zeros(n)
    gsum = np.zeros((n, 3))
    asum = np.zeros((n, 3))
    for s in range(slots.shape[1]):
        ids = slots[:, s]
        for b in np.unique(ids[ids >= 0]):
            rows = np.nonzero(ids == b)[0]
            x = pts[rows]
            t_lo = (x - (origins[b] - delta)) / width
            t_hi = ((origins[b] + block_size + delta) - x) / width
            a_lo, a_hi = _smoothstep(t_lo), _smoothstep(t_hi)
            s_ax = a_lo * a_hi
            ds_ax = (_smoothstep_deriv(t_lo) * a_hi - a_lo * _smoothstep_deriv(t_hi)) / width
            alpha = s_ax[:, 0] * s_ax[:, 1] * s_ax[:, 2]
            keep = alpha > 0.0
            if not keep.any():
                continue
            rows, x, alpha = rows[keep], x[keep], alpha[keep]
            s_ax, ds_ax = s_ax[keep], ds_ax[keep]
            dalpha = np.stack(
                [
                    ds_ax[:, 0] * s_ax[:, 1] * s_ax[:, 2],
                    s_ax[:, 0] * ds_ax[:, 1] * s_ax[:, 2],
                    s_ax[:, 0] * s_ax[:, 1] * ds_ax[:, 2],
                ],
                axis=1,
            )
            f = np.zeros(len(rows))
            df = np.zeros((len(rows), 3))
            _accumulate(params[kstart[b] : kstart[b + 1]], x, cutoff, f, df)
            wsum[rows] += alpha
            vsum[rows] += alpha * f
            gsum[rows] += dalpha * f[:, None] + alpha[:, None] * df
            asum[rows] += dalpha
    valid = wsum > 0.0
    val = np.zeros(n)
    grad = np.zeros((n, 3))
    val[valid] = vsum[valid] / wsum[valid]
    grad[valid] = (gsum[valid] - val[valid, None] * asum[valid]) / wsum[valid, None]
    return val, grad, valid.astype(np.uint8)


def _edt_axis(f, feat, axis, chunk=1 << 21):
    # Exact 1-D pass: d[p] = min_q f[q] + (p - q)^2, evaluated by brute force per line.
    f = np.moveaxis(f, axis, -1)
    feat = np.moveaxis(feat, axis, -1)
    shape = f.shape
    n = shape[-1]
    lines = f.reshape(-1, n)
    flines = feat.reshape(-1, n)
    out = np.empty_like(lines)
    fout = np.empty_like(flines)
    q = np.arange(n)
    sq = (q[:, None] - q[None, :]).astype(float) ** 2  # [p, q]
    step = max(1, chunk // (n * n))
    for start in range(0, len(lines), step):
        block = lines[start : start + step]
        cand = block[:, None, :] + sq[None, :, :]
        arg = np.argmin(cand, axis=2)
        out[start : start + step] = np.take_along_axis(cand, arg[..., None], axis=2)[..., 0]
        fout[start : start + step] = np.take_along_axis(flines[start : start + step], arg, axis=1)
    empty = ~np.isfinite(out)
    fout[empty] = -1
    return (
        np.moveaxis(out.reshape(shape), -1, axis),
        np.moveaxis(fout.reshape(shape), -1, axis),
    )


def squared_edt(occupied):
    occupied = np.asarray(occupied, dtype=bool)
    f = np.where(occupied, 0.0, np.inf)
    feat = np.where(occupied, np.arange(occupied.size).reshape(occupied.shape), -1).astype(np.int64)
    for axis in (2, 1, 0):
        f, feat = _edt_axis(f, feat, axis)
    return np.ascontiguousarray(f), np.ascontiguousarray(feat)
