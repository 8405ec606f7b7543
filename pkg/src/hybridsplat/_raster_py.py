"""Pure numpy tile kernels; same contract as the compiled ``_raster_ext``.

Each tile is processed as a dense (splats x pixels) block with cumulative
products standing in for the per-pixel front-to-back loop.
"""
import numpy as np

ALPHA_MAX = 0.99
T_MIN = 1e-4
POWER_MIN = -4.5


def _tile_pixels(t, width, height, tile):
    tiles_x = (width + tile - 1) // tile
    tx, ty = t % tiles_x, t // tiles_x
    ys = np.arange(ty * tile, min((ty + 1) * tile, height))
    xs = np.arange(tx * tile, min((tx + 1) * tile, width))
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return yy.ravel(), xx.ravel()


def _tile_alpha(sel, yy, xx, mean2d, conic, opacity):
    dx = (xx + 0.5)[None, :] - mean2d[sel, 0][:, None]
    dy = (yy + 0.5)[None, :] - mean2d[sel, 1][:, None]
    a, b, c = conic[sel, 0][:, None], conic[sel, 1][:, None], conic[sel, 2][:, None]
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    inside = (power >= POWER_MIN) & (power <= 0.0)
    g = np.exp(np.minimum(power, 0.0))
    raw = opacity[sel][:, None] * g
    alpha = np.where(inside, np.minimum(raw, ALPHA_MAX), 0.0)
    # exclusive transmittance and the early-stop rule
    one_minus = 1.0 - alpha
    t_excl = np.vstack([np.ones((1, alpha.shape[1])), np.cumprod(one_minus, axis=0)[:-1]])
    keep = t_excl >= T_MIN
    alpha = alpha * keep
    return dx, dy, a, b, c, g, raw, inside & keep, alpha, t_excl


def forward(ranges, ids, mean2d, conic, opacity, payload, width, height, tile):
    C = payload.shape[1]
    out = np.zeros((height, width, C))
    tfin = np.ones((height, width))
    last = np.zeros((height, width), dtype=np.int64)
    for t in range(ranges.shape[0]):
        start, end = ranges[t]
        if start >= end:
            continue
        yy, xx = _tile_pixels(t, width, height, tile)
        sel = ids[start:end]
        *_, used, alpha, t_excl = _tile_alpha(sel, yy, xx, mean2d, conic, opacity)
        w = alpha * t_excl
        out[yy, xx] = w.T @ payload[sel]
        tfin[yy, xx] = np.prod(1.0 - alpha, axis=0)
        k = np.arange(start, end)[:, None]
        last[yy, xx] = np.max(np.where(used, k + 1, 0), axis=0)
    return out, tfin, last


def backward(ranges, ids, mean2d, conic, opacity, payload, width, height, tile, grad_out, grad_alpha, tfin, last):
    N, C = payload.shape
    g_mean = np.zeros((N, 2))
    g_conic = np.zeros((N, 3))
    g_opac = np.zeros(N)
    g_pay = np.zeros((N, C))
    for t in range(ranges.shape[0]):
        start, end = ranges[t]
        if start >= end:
            continue
        yy, xx = _tile_pixels(t, width, height, tile)
        sel = ids[start:end]
        dx, dy, a, b, c, g, raw, used, alpha, t_excl = _tile_alpha(sel, yy, xx, mean2d, conic, opacity)
        go = grad_out[yy, xx]  # (P, C)
        w = alpha * t_excl  # (K, P)
        f = payload[sel]  # (K, C)
        np.add.at(g_pay, sel, w @ go)
        contrib = w[:, :, None] * f[:, None, :]  # (K, P, C)
        after = np.cumsum(contrib[::-1], axis=0)[::-1] - contrib  # sum over j > k
        inv = 1.0 / (1.0 - alpha)
        dl_dalpha = np.einsum("pc,kpc->kp", go, f[:, None, :] * t_excl[:, :, None] - after * inv[:, :, None])
        dl_dalpha += grad_alpha[yy, xx][None, :] * tfin[yy, xx][None, :] * inv
        active = used & (raw < ALPHA_MAX)
        dl_dalpha = np.where(active, dl_dalpha, 0.0)
        np.add.at(g_opac, sel, (dl_dalpha * g).sum(axis=1))
        dp = dl_dalpha * alpha
        gm = np.stack([(dp * (a * dx + b * dy)).sum(1), (dp * (b * dx + c * dy)).sum(1)], axis=1)
        gc = np.stack([(-0.5 * dp * dx * dx).sum(1), (-dp * dx * dy).sum(1), (-0.5 * dp * dy * dy).sum(1)], axis=1)
        np.add.at(g_mean, sel, gm)
        np.add.at(g_conic, sel, gc)
    return g_mean, g_conic, g_opac, g_pay


def _face_extent(mu, cov, res, near):
    """Texel bounds ``(j0, j1, i0, i1)`` of each splat's 3-sigma box on a face; full face when it reaches the eye plane."""
    e = 3.0 * np.sqrt(np.maximum(np.diagonal(cov, axis1=1, axis2=2), 0.0))
    zlo, zhi = mu[:, 2] - e[:, 2], mu[:, 2] + e[:, 2]
    full = zlo <= near
    zs = np.stack([np.where(full, 1.0, zlo), zhi], -1)
    bounds = []
    for ax in (0, 1):
        ends = np.stack([mu[:, ax] - e[:, ax], mu[:, ax] + e[:, ax]], -1)
        r = ends[:, :, None] / zs[:, None, :]
        lo = np.where(full, -1.0, r.min(axis=(1, 2)))
        hi = np.where(full, 1.0, r.max(axis=(1, 2)))
        bounds += [np.floor((lo + 1.0) * res / 2.0 - 0.5), np.ceil((hi + 1.0) * res / 2.0 - 0.5)]
    return [np.clip(b, 0, res - 1).astype(np.int64) for b in bounds], zhi > near


def occlusion(rel, prec, cov, opacity, rots, res, near):
    """Transmittance cubemap ``(6, res, res)`` seen from the origin.

    Every Gaussian is evaluated at its peak along each texel ray (rays only
    see Gaussians ahead of the origin); opacities combine multiplicatively.
    """
    out = np.ones((6, res, res))
    c = (np.arange(res) + 0.5) * 2.0 / res - 1.0
    v, u = np.meshgrid(c, c, indexing="ij")
    for f in range(6):
        R = rots[f]
        mu = rel @ R.T
        P = R @ prec @ R.T
        S = R @ cov @ R.T
        (j0, j1, i0, i1), front = _face_extent(mu, S, res, near)
        front &= (j0 <= j1) & (i0 <= i1)
        logt = np.zeros((res, res))
        for k in np.nonzero(front)[0]:
            uu, vv = u[i0[k]:i1[k] + 1, j0[k]:j1[k] + 1], v[i0[k]:i1[k] + 1, j0[k]:j1[k] + 1]
            d = np.stack([uu, vv, np.ones_like(uu)], -1)
            Pd = d @ P[k]
            a = (Pd * d).sum(-1)
            b = Pd @ mu[k]
            q = mu[k] @ P[k] @ mu[k] - b * b / a
            alpha = np.where((b > 0) & (q <= 9.0), np.minimum(ALPHA_MAX, opacity[k] * np.exp(-0.5 * q)), 0.0)
            logt[i0[k]:i1[k] + 1, j0[k]:j1[k] + 1] += np.log1p(-alpha)
        out[f] = np.exp(logt)
    return out
