"""Pure numpy rasterizer, used when the compiled extension is unavailable.

Same per-pixel semantics as the compiled kernels: each tile's pixels are
processed as one vector while the loop walks the tile's depth-sorted list.
"""
import numpy as np
from scipy.ndimage import correlate1d


def _tile_pixels(tx, ty, tile, width, height):
    xs = np.arange(tx * tile, min((tx + 1) * tile, width), dtype=np.float64)
    ys = np.arange(ty * tile, min((ty + 1) * tile, height), dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    return px.ravel(), py.ravel(), (slice(ty * tile, ty * tile + len(ys)), slice(tx * tile, tx * tile + len(xs)))


def _alpha(g, px, py, means, conics, opac, cutoff):
    dx = px - means[g, 0]
    dy = py - means[g, 1]
    q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
    inside = q <= cutoff
    gauss = np.exp(-0.5 * q)
    return dx, dy, gauss, np.where(inside, opac[g] * gauss, 0.0), inside


def render_forward(height, width, tile, tile_start, tile_ids, means, conics, opac, colors, cutoff, t_min):
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    out = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            px, py, sl = _tile_pixels(tx, ty, tile, width, height)
            T = np.ones(len(px))
            acc = np.zeros((len(px), 3))
            for k in range(tile_start[t], tile_start[t + 1]):
                live = T >= t_min
                if not live.any():
                    break
                g = tile_ids[k]
                _, _, _, alpha, _ = _alpha(g, px, py, means, conics, opac, cutoff)
                alpha = np.where(live, alpha, 0.0)
                acc += (alpha * T)[:, None] * colors[g]
                T = T * (1.0 - alpha)
            h, w = sl[0].stop - sl[0].start, sl[1].stop - sl[1].start
            out[sl] = acc.reshape(h, w, 3)
            trans[sl] = T.reshape(h, w)
    return out, trans, None


def render_backward(height, width, tile, tile_start, tile_ids, means, conics, opac, colors,
                    grad_out, records, cutoff, t_min):
    m = len(means)
    g_means = np.zeros((m, 2))
    g_conics = np.zeros((m, 3))
    g_opac = np.zeros(m)
    g_colors = np.zeros((m, 3))
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            if tile_start[t + 1] == tile_start[t]:
                continue
            px, py, sl = _tile_pixels(tx, ty, tile, width, height)
            go = grad_out[sl].reshape(-1, 3)
            T = np.ones(len(px))
            layers = []
            for k in range(tile_start[t], tile_start[t + 1]):
                live = T >= t_min
                if not live.any():
                    break
                g = tile_ids[k]
                dx, dy, gauss, alpha, inside = _alpha(g, px, py, means, conics, opac, cutoff)
                used = live & inside
                alpha = np.where(used, alpha, 0.0)
                layers.append((g, alpha, T, gauss, dx, dy, used))
                T = T * (1.0 - alpha)
            b = np.zeros((len(px), 3))
            for g, alpha, T, gauss, dx, dy, used in reversed(layers):
                w = alpha * T
                g_colors[g] += go.T @ w
                g_alpha = T * np.sum(go * (colors[g] - b), axis=1)
                g_alpha = np.where(used, g_alpha, 0.0)
                b = alpha[:, None] * colors[g] + (1.0 - alpha)[:, None] * b
                g_opac[g] += np.sum(g_alpha * gauss)
                g_q = -0.5 * alpha * g_alpha
                g_conics[g, 0] += np.sum(g_q * dx * dx)
                g_conics[g, 1] += np.sum(g_q * 2.0 * dx * dy)
                g_conics[g, 2] += np.sum(g_q * dy * dy)
                g_means[g, 0] += np.sum(-2.0 * g_q * (conics[g, 0] * dx + conics[g, 1] * dy))
                g_means[g, 1] += np.sum(-2.0 * g_q * (conics[g, 1] * dx + conics[g, 2] * dy))
    return g_means, g_conics, g_opac, g_colors


def blur_same(img, w):
    """Separable correlation with zero padding, output the size of ``img``."""
    out = correlate1d(img, w, axis=0, mode="constant")
    return correlate1d(out, w, axis=1, mode="constant")


def ssim_grad(A, B, mu_a, sq_a, w, c1, c2, grad_a):
    """Mean SSIM of A and B with gradients w.r.t. B (and A when ``grad_a``)."""
    mu_b = blur_same(B, w)
    sq_b = blur_same(B * B, w)
    ab = blur_same(A * B, w)
    var_a = sq_a - mu_a * mu_a
    var_b = sq_b - mu_b * mu_b
    cov = ab - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + c1
    n2 = 2.0 * cov + c2
    d1 = mu_a * mu_a + mu_b * mu_b + c1
    d2 = var_a + var_b + c2
    S = (n1 * n2) / (d1 * d2)
    g = 1.0 / S.size
    dS_dcov = 2.0 * n1 / (d1 * d2) * g
    dS_dvar = -S / d2 * g

    def side(mu_x, mu_y, x, y):
        # through mu_x, E[x^2] and E[xy]
        dS_dmu = (2.0 * mu_y * n2 / (d1 * d2) - S * 2.0 * mu_x / d1) * g
        d_mu = dS_dmu + dS_dvar * (-2.0 * mu_x) + dS_dcov * (-mu_y)
        return blur_same(d_mu, w) + 2.0 * x * blur_same(dS_dvar, w) + y * blur_same(dS_dcov, w)

    ga = side(mu_a, mu_b, A, B) if grad_a else None
    return float(np.sum(S) / S.size), side(mu_b, mu_a, B, A), ga
