"""Per-pixel compositing kernels.

Work is split into 16x16 pixel tiles. Each (tile, gaussian) pair owns one
slot in the binned entry list, so backward writes never collide and the
final per-gaussian reduction runs in a fixed slot order.
"""

import math

import numpy as np
from numba import njit, prange

ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4


@njit(cache=True)
def bin_tiles(order, rect, tile, tiles_x, tiles_y):
    n_tiles = tiles_x * tiles_y
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for k in range(order.shape[0]):
        g = order[k]
        for ty in range(rect[g, 2] // tile, rect[g, 3] // tile + 1):
            for tx in range(rect[g, 0] // tile, rect[g, 1] // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    entries = np.empty(offsets[-1], dtype=np.int64)
    for k in range(order.shape[0]):
        g = order[k]
        for ty in range(rect[g, 2] // tile, rect[g, 3] // tile + 1):
            for tx in range(rect[g, 0] // tile, rect[g, 1] // tile + 1):
                t = ty * tiles_x + tx
                entries[fill[t]] = g
                fill[t] += 1
    return offsets, entries


@njit(parallel=True, cache=True)
def composite_forward(means, conics, opac, colors, rect, offsets, entries, height, width, tile, tiles_x):
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    count = np.zeros((height, width), dtype=np.int32)
    n_tiles = offsets.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        start = offsets[t]
        end = offsets[t + 1]
        if start == end:
            continue
        for y in range(ty * tile, min(height, (ty + 1) * tile)):
            for x in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                r = 0.0
                g_ = 0.0
                b = 0.0
                c = 0
                for e in range(start, end):
                    gi = entries[e]
                    if x < rect[gi, 0] or x > rect[gi, 1] or y < rect[gi, 2] or y > rect[gi, 3]:
                        continue
                    dx = x - means[gi, 0]
                    dy = y - means[gi, 1]
                    power = -0.5 * (conics[gi, 0] * dx * dx + conics[gi, 2] * dy * dy) - conics[gi, 1] * dx * dy
                    alpha = opac[gi] * math.exp(power)
                    if alpha < ALPHA_MIN:
                        continue
                    w = alpha * T
                    r += w * colors[gi, 0]
                    g_ += w * colors[gi, 1]
                    b += w * colors[gi, 2]
                    T *= 1.0 - alpha
                    c += 1
                    if T < T_STOP:
                        break
                image[y, x, 0] = r
                image[y, x, 1] = g_
                image[y, x, 2] = b
                trans[y, x] = T
                count[y, x] = c
    return image, trans, count


@njit(parallel=True, cache=True)
def composite_backward(means, conics, opac, colors, rect, offsets, entries, height, width, tile, tiles_x,
                       grad_image):
    """Returns per-slot gradients (n_entries, 9):
    d mean (2), d conic (a, b, c), d opacity, d color (3)."""
    n_tiles = offsets.shape[0] - 1
    slots = np.zeros((entries.shape[0], 9))
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        start = offsets[t]
        end = offsets[t + 1]
        if start == end:
            continue
        buf_e = np.empty(end - start, dtype=np.int64)
        buf_a = np.empty(end - start)
        buf_T = np.empty(end - start)
        for y in range(ty * tile, min(height, (ty + 1) * tile)):
            for x in range(tx * tile, min(width, (tx + 1) * tile)):
                gr = grad_image[y, x, 0]
                gg = grad_image[y, x, 1]
                gb = grad_image[y, x, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                T = 1.0
                k = 0
                for e in range(start, end):
                    gi = entries[e]
                    if x < rect[gi, 0] or x > rect[gi, 1] or y < rect[gi, 2] or y > rect[gi, 3]:
                        continue
                    dx = x - means[gi, 0]
                    dy = y - means[gi, 1]
                    power = -0.5 * (conics[gi, 0] * dx * dx + conics[gi, 2] * dy * dy) - conics[gi, 1] * dx * dy
                    alpha = opac[gi] * math.exp(power)
                    if alpha < ALPHA_MIN:
                        continue
                    buf_e[k] = e
                    buf_a[k] = alpha
                    buf_T[k] = T
                    k += 1
                    T *= 1.0 - alpha
                    if T < T_STOP:
                        break
                # colour seen behind the current splat
                Rr = 0.0
                Rg = 0.0
                Rb = 0.0
                for j in range(k - 1, -1, -1):
                    e = buf_e[j]
                    gi = entries[e]
                    a = buf_a[j]
                    Tj = buf_T[j]
                    cr = colors[gi, 0]
                    cg = colors[gi, 1]
                    cb = colors[gi, 2]
                    w = a * Tj
                    slots[e, 6] += w * gr
                    slots[e, 7] += w * gg
                    slots[e, 8] += w * gb
                    d_alpha = Tj * ((cr - Rr) * gr + (cg - Rg) * gg + (cb - Rb) * gb)
                    Rr = a * cr + (1.0 - a) * Rr
                    Rg = a * cg + (1.0 - a) * Rg
                    Rb = a * cb + (1.0 - a) * Rb
                    dx = x - means[gi, 0]
                    dy = y - means[gi, 1]
                    slots[e, 5] += d_alpha * a / opac[gi]
                    d_power = d_alpha * a
                    slots[e, 0] += d_power * (conics[gi, 0] * dx + conics[gi, 1] * dy)
                    slots[e, 1] += d_power * (conics[gi, 1] * dx + conics[gi, 2] * dy)
                    slots[e, 2] += -0.5 * d_power * dx * dx
                    slots[e, 3] += -d_power * dx * dy
                    slots[e, 4] += -0.5 * d_power * dy * dy
    return slots


@njit(cache=True)
def reduce_slots(slots, entries, n):
    out = np.zeros((n, slots.shape[1]))
    for e in range(entries.shape[0]):
        g = entries[e]
        for j in range(slots.shape[1]):
            out[g, j] += slots[e, j]
    return out


@njit(cache=True)
def pixel_weights(means, conics, opac, rect, order, x, y):
    """Blend weights alpha_i * T_i of each gaussian at one pixel, plus final T."""
    w = np.zeros(means.shape[0])
    T = 1.0
    for k in range(order.shape[0]):
        gi = order[k]
        if x < rect[gi, 0] or x > rect[gi, 1] or y < rect[gi, 2] or y > rect[gi, 3]:
            continue
        dx = x - means[gi, 0]
        dy = y - means[gi, 1]
        power = -0.5 * (conics[gi, 0] * dx * dx + conics[gi, 2] * dy * dy) - conics[gi, 1] * dx * dy
        alpha = opac[gi] * math.exp(power)
        if alpha < ALPHA_MIN:
            continue
        w[gi] = alpha * T
        T *= 1.0 - alpha
        if T < T_STOP:
            break
    return w, T
