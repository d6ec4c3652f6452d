"""Sequential windowed splatting kernels.

Each primitive touches only the pixels inside cutoff_sigmas standard
deviations of its center (circular window); everything outside is treated as
exactly zero. Iteration order is fixed (primitives outer, rows then columns
inner) and accumulation is sequential, so results are bit-stable across runs
regardless of population size.

The backward kernel consumes the residual image premultiplied by 2/(H*W) and
produces analytic gradients of the mean-squared-error loss:

    dL/dmu_i    = sum_p  R2(p) * a_i * e_i(p) * (p - mu_i) / s_i^2
    dL/ds_i     = sum_p  R2(p) * a_i * e_i(p) * ||p - mu_i||^2 / s_i^3
    dL/dalpha_i = sum_p  R2(p) * e_i(p)

with e_i(p) = exp(-||p - mu_i||^2 / (2 s_i^2)) and R2 = (2/HW) * (render - target).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def forward_kernel(positions, scales, opacities, H, W, cutoff, out):
    for i in range(positions.shape[0]):
        x = positions[i, 0]
        y = positions[i, 1]
        s = scales[i]
        a = opacities[i]
        r = cutoff * s
        r2max = r * r
        inv2s2 = 1.0 / (2.0 * s * s)
        j0 = int(np.ceil((x - r) * W - 0.5))
        j1 = int(np.floor((x + r) * W - 0.5))
        i0 = int(np.ceil((y - r) * H - 0.5))
        i1 = int(np.floor((y + r) * H - 0.5))
        if j0 < 0:
            j0 = 0
        if j1 > W - 1:
            j1 = W - 1
        if i0 < 0:
            i0 = 0
        if i1 > H - 1:
            i1 = H - 1
        for py in range(i0, i1 + 1):
            dy = (py + 0.5) / H - y
            dy2 = dy * dy
            if dy2 > r2max:
                continue
            for px in range(j0, j1 + 1):
                dx = (px + 0.5) / W - x
                d2 = dx * dx + dy2
                if d2 <= r2max:
                    out[py, px] += a * np.exp(-d2 * inv2s2)


@njit(cache=True)
def backward_kernel(positions, scales, opacities, R2, cutoff, gpos, gscale, galpha):
    H, W = R2.shape
    for i in range(positions.shape[0]):
        x = positions[i, 0]
        y = positions[i, 1]
        s = scales[i]
        a = opacities[i]
        r = cutoff * s
        r2max = r * r
        inv2s2 = 1.0 / (2.0 * s * s)
        inv_s2 = 1.0 / (s * s)
        inv_s3 = inv_s2 / s
        j0 = int(np.ceil((x - r) * W - 0.5))
        j1 = int(np.floor((x + r) * W - 0.5))
        i0 = int(np.ceil((y - r) * H - 0.5))
        i1 = int(np.floor((y + r) * H - 0.5))
        if j0 < 0:
            j0 = 0
        if j1 > W - 1:
            j1 = W - 1
        if i0 < 0:
            i0 = 0
        if i1 > H - 1:
            i1 = H - 1
        gx = 0.0
        gy = 0.0
        gs = 0.0
        ga = 0.0
        for py in range(i0, i1 + 1):
            dy = (py + 0.5) / H - y
            dy2 = dy * dy
            if dy2 > r2max:
                continue
            for px in range(j0, j1 + 1):
                dx = (px + 0.5) / W - x
                d2 = dx * dx + dy2
                if d2 <= r2max:
                    common = R2[py, px] * np.exp(-d2 * inv2s2)
                    ga += common
                    wa = common * a
                    gx += wa * dx * inv_s2
                    gy += wa * dy * inv_s2
                    gs += wa * d2 * inv_s3
        gpos[i, 0] = gx
        gpos[i, 1] = gy
        gscale[i] = gs
        galpha[i] = ga
