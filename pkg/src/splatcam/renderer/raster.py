"""Per-pixel front-to-back alpha compositing kernels (forward and backward).

Both kernels walk the depth-sorted Gaussians for every pixel independently,
so results do not depend on any scheduling. Pixel (row, col) is sampled at
its center ``(col + 0.5, row + 0.5)``. Gaussians are first binned into square
tiles (keeping depth order) so a pixel only visits those whose footprint box
touches its tile.
"""
import numpy as np
from numba import njit

ALPHA_MAX = 0.999
TILE = 8


@njit(cache=True)
def bin_tiles(order, bounds, width, height):
    """Per-tile depth-ordered Gaussian lists as (start offsets, flat indices)."""
    tw = (width + TILE - 1) // TILE
    th = (height + TILE - 1) // TILE
    counts = np.zeros(tw * th + 1, dtype=np.int64)
    for g in order:
        if bounds[g, 0] >= bounds[g, 1] or bounds[g, 2] >= bounds[g, 3]:
            continue
        for ty in range(bounds[g, 2] // TILE, (bounds[g, 3] - 1) // TILE + 1):
            for tx in range(bounds[g, 0] // TILE, (bounds[g, 1] - 1) // TILE + 1):
                counts[ty * tw + tx + 1] += 1
    starts = np.cumsum(counts)
    fill = starts[:-1].copy()
    flat = np.empty(starts[-1], dtype=np.int64)
    for g in order:
        if bounds[g, 0] >= bounds[g, 1] or bounds[g, 2] >= bounds[g, 3]:
            continue
        for ty in range(bounds[g, 2] // TILE, (bounds[g, 3] - 1) // TILE + 1):
            for tx in range(bounds[g, 0] // TILE, (bounds[g, 1] - 1) // TILE + 1):
                t = ty * tw + tx
                flat[fill[t]] = g
                fill[t] += 1
    return starts, flat


@njit(cache=True)
def footprint_bounds(mean2d, cov2d, opac, alpha_min, width, height):
    """Integer pixel ranges [x0, x1) x [y0, y1) outside which ``alpha < alpha_min``.

    The box is the bounding square of the ellipse ``o * G = alpha_min``.
    """
    n = mean2d.shape[0]
    out = np.zeros((n, 4), dtype=np.int64)
    for g in range(n):
        o = opac[g]
        if o <= alpha_min:
            continue
        a, b, c = cov2d[g, 0, 0], cov2d[g, 0, 1], cov2d[g, 1, 1]
        mid = 0.5 * (a + c)
        lam = mid + np.sqrt(max(0.1, mid * mid - (a * c - b * b)))
        rad = np.sqrt(2.0 * np.log(o / alpha_min) * lam)
        u, v = mean2d[g, 0], mean2d[g, 1]
        x0 = int(np.floor(u - rad - 0.5))
        x1 = int(np.ceil(u + rad - 0.5)) + 1
        y0 = int(np.floor(v - rad - 0.5))
        y1 = int(np.ceil(v + rad - 0.5)) + 1
        out[g, 0] = min(max(x0, 0), width)
        out[g, 1] = min(max(x1, 0), width)
        out[g, 2] = min(max(y0, 0), height)
        out[g, 3] = min(max(y1, 0), height)
    return out


@njit(cache=True)
def power_cutoffs(opac, alpha_min):
    """Exponent below which ``o * exp(power)`` is certainly under ``alpha_min`` (with a small margin)."""
    return np.log(alpha_min / np.maximum(opac, 1e-300)) - 1e-6


@njit(cache=True)
def composite_forward(order, mean2d, conic, opac, values, bounds, width, height, alpha_min, t_min):
    """Composite ``values`` (N, K) over an H x W x K image; returns (image, final transmittance)."""
    k_ch = values.shape[1]
    img = np.zeros((height, width, k_ch))
    trans = np.ones((height, width))
    starts, flat = bin_tiles(order, bounds, width, height)
    cutoff = power_cutoffs(opac, alpha_min)
    tw = (width + TILE - 1) // TILE
    for row in range(height):
        py = row + 0.5
        for col in range(width):
            px = col + 0.5
            T = 1.0
            tile = (row // TILE) * tw + col // TILE
            for j in range(starts[tile], starts[tile + 1]):
                g = flat[j]
                if col < bounds[g, 0] or col >= bounds[g, 1] or row < bounds[g, 2] or row >= bounds[g, 3]:
                    continue
                dx = px - mean2d[g, 0]
                dy = py - mean2d[g, 1]
                power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
                if power < cutoff[g]:
                    continue
                alpha = min(ALPHA_MAX, opac[g] * np.exp(power))
                if alpha < alpha_min:
                    continue
                w = alpha * T
                for ch in range(k_ch):
                    img[row, col, ch] += values[g, ch] * w
                T *= 1.0 - alpha
                if T < t_min:
                    break
            trans[row, col] = T
    return img, trans


@njit(cache=True)
def composite_backward(order, mean2d, conic, opac, values, bounds, width, height, alpha_min, t_min, grad_img):
    """Accumulate dL/d(mean2d) (N, 2) and dL/d(conic a, b, c) (N, 3) given dL/d(image).

    Depth order is held fixed. Clamped alphas contribute no gradient.
    """
    n = mean2d.shape[0]
    k_ch = values.shape[1]
    d_mean = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    m = order.shape[0]
    buf_g = np.empty(m, dtype=np.int64)
    buf_a = np.empty(m)
    buf_t = np.empty(m)
    buf_dx = np.empty(m)
    buf_dy = np.empty(m)
    buf_clamped = np.empty(m, dtype=np.bool_)
    behind = np.zeros(k_ch)
    starts, flat = bin_tiles(order, bounds, width, height)
    cutoff = power_cutoffs(opac, alpha_min)
    tw = (width + TILE - 1) // TILE
    for row in range(height):
        py = row + 0.5
        for col in range(width):
            skip = True
            for ch in range(k_ch):
                if grad_img[row, col, ch] != 0.0:
                    skip = False
            if skip:
                continue
            px = col + 0.5
            T = 1.0
            cnt = 0
            tile = (row // TILE) * tw + col // TILE
            for j in range(starts[tile], starts[tile + 1]):
                g = flat[j]
                if col < bounds[g, 0] or col >= bounds[g, 1] or row < bounds[g, 2] or row >= bounds[g, 3]:
                    continue
                dx = px - mean2d[g, 0]
                dy = py - mean2d[g, 1]
                power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
                if power < cutoff[g]:
                    continue
                raw = opac[g] * np.exp(power)
                alpha = min(ALPHA_MAX, raw)
                if alpha < alpha_min:
                    continue
                buf_g[cnt] = g
                buf_a[cnt] = alpha
                buf_t[cnt] = T
                buf_dx[cnt] = dx
                buf_dy[cnt] = dy
                buf_clamped[cnt] = raw > ALPHA_MAX
                cnt += 1
                T *= 1.0 - alpha
                if T < t_min:
                    break
            for ch in range(k_ch):
                behind[ch] = 0.0
            for k in range(cnt - 1, -1, -1):
                g = buf_g[k]
                alpha = buf_a[k]
                T = buf_t[k]
                d_alpha = 0.0
                for ch in range(k_ch):
                    d_alpha += grad_img[row, col, ch] * (values[g, ch] * T - behind[ch] / (1.0 - alpha))
                    behind[ch] += values[g, ch] * alpha * T
                if buf_clamped[k] or d_alpha == 0.0:
                    continue
                dx = buf_dx[k]
                dy = buf_dy[k]
                # alpha = o * exp(power); d alpha / d power = alpha
                dp = d_alpha * alpha
                d_mean[g, 0] += dp * (conic[g, 0] * dx + conic[g, 1] * dy)
                d_mean[g, 1] += dp * (conic[g, 1] * dx + conic[g, 2] * dy)
                d_conic[g, 0] += -0.5 * dp * dx * dx
                d_conic[g, 1] += -dp * dx * dy
                d_conic[g, 2] += -0.5 * dp * dy * dy
    return d_mean, d_conic
