# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tile kernels for front-to-back alpha blending and its adjoint."""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, exp, floor, sqrt

cdef double ALPHA_MAX = 0.99
cdef double T_MIN = 1e-4
cdef double POWER_MIN = -4.5  # 3 sigma footprint


def forward(const long[:, :] ranges, const long[:] ids, const double[:, :] mean2d,
            const double[:, :] conic, const double[:] opacity, const double[:, :] payload,
            int width, int height, int tile):
    cdef int C = payload.shape[1]
    cdef int tiles_x = (width + tile - 1) // tile
    out_np = np.zeros((height, width, C), dtype=np.float64)
    tfin_np = np.ones((height, width), dtype=np.float64)
    last_np = np.zeros((height, width), dtype=np.int64)
    cdef double[:, :, :] out = out_np
    cdef double[:, :] tfin = tfin_np
    cdef long[:, :] last = last_np
    cdef int tx, ty, x, y, c, t
    cdef long k, i, start, end
    cdef double px, py, dx, dy, power, alpha, T, w
    with nogil:
        for t in range(ranges.shape[0]):
            start = ranges[t, 0]
            end = ranges[t, 1]
            if start >= end:
                continue
            tx = t % tiles_x
            ty = t // tiles_x
            for y in range(ty * tile, min((ty + 1) * tile, height)):
                py = y + 0.5
                for x in range(tx * tile, min((tx + 1) * tile, width)):
                    px = x + 0.5
                    T = 1.0
                    for k in range(start, end):
                        i = ids[k]
                        dx = px - mean2d[i, 0]
                        dy = py - mean2d[i, 1]
                        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                        if power < POWER_MIN or power > 0.0:
                            continue
                        alpha = opacity[i] * exp(power)
                        if alpha > ALPHA_MAX:
                            alpha = ALPHA_MAX
                        w = alpha * T
                        for c in range(C):
                            out[y, x, c] += payload[i, c] * w
                        T = T * (1.0 - alpha)
                        last[y, x] = k + 1
                        if T < T_MIN:
                            break
                    tfin[y, x] = T
    return out_np, tfin_np, last_np


def backward(const long[:, :] ranges, const long[:] ids, const double[:, :] mean2d,
             const double[:, :] conic, const double[:] opacity, const double[:, :] payload,
             int width, int height, int tile,
             const double[:, :, :] grad_out, const double[:, :] grad_alpha,
             const double[:, :] tfin, const long[:, :] last):
    cdef int N = payload.shape[0]
    cdef int C = payload.shape[1]
    cdef int tiles_x = (width + tile - 1) // tile
    g_mean_np = np.zeros((N, 2), dtype=np.float64)
    g_conic_np = np.zeros((N, 3), dtype=np.float64)
    g_opac_np = np.zeros(N, dtype=np.float64)
    g_pay_np = np.zeros((N, C), dtype=np.float64)
    acc_np = np.zeros(C, dtype=np.float64)
    cdef double[:, :] g_mean = g_mean_np
    cdef double[:, :] g_conic = g_conic_np
    cdef double[:] g_opac = g_opac_np
    cdef double[:, :] g_pay = g_pay_np
    cdef double[:] acc = acc_np
    cdef int tx, ty, x, y, c, t
    cdef long k, i, start
    cdef double px, py, dx, dy, power, g, alpha, raw, T, Tf, dl_dalpha, dl_dpower, go, ga
    with nogil:
        for t in range(ranges.shape[0]):
            start = ranges[t, 0]
            if start >= ranges[t, 1]:
                continue
            tx = t % tiles_x
            ty = t // tiles_x
            for y in range(ty * tile, min((ty + 1) * tile, height)):
                py = y + 0.5
                for x in range(tx * tile, min((tx + 1) * tile, width)):
                    px = x + 0.5
                    Tf = tfin[y, x]
                    T = Tf
                    ga = grad_alpha[y, x]
                    for c in range(C):
                        acc[c] = 0.0
                    k = last[y, x] - 1
                    while k >= start:
                        i = ids[k]
                        k = k - 1
                        dx = px - mean2d[i, 0]
                        dy = py - mean2d[i, 1]
                        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                        if power < POWER_MIN or power > 0.0:
                            continue
                        g = exp(power)
                        raw = opacity[i] * g
                        alpha = raw if raw < ALPHA_MAX else ALPHA_MAX
                        T = T / (1.0 - alpha)
                        dl_dalpha = ga * Tf / (1.0 - alpha)
                        for c in range(C):
                            go = grad_out[y, x, c]
                            g_pay[i, c] += go * alpha * T
                            dl_dalpha += go * (payload[i, c] * T - acc[c] / (1.0 - alpha))
                            acc[c] += payload[i, c] * alpha * T
                        if raw >= ALPHA_MAX:
                            continue
                        g_opac[i] += dl_dalpha * g
                        dl_dpower = dl_dalpha * alpha
                        g_mean[i, 0] += dl_dpower * (conic[i, 0] * dx + conic[i, 1] * dy)
                        g_mean[i, 1] += dl_dpower * (conic[i, 1] * dx + conic[i, 2] * dy)
                        g_conic[i, 0] += -0.5 * dl_dpower * dx * dx
                        g_conic[i, 1] += -dl_dpower * dx * dy
                        g_conic[i, 2] += -0.5 * dl_dpower * dy * dy
    return g_mean_np, g_conic_np, g_opac_np, g_pay_np


def occlusion(const double[:, :] rel, const double[:, :, :] prec, const double[:, :, :] cov,
              const double[:] opacity, const double[:, :, :] rots, int res, double near):
    """Transmittance cubemap ``(6, res, res)`` seen from the origin; Gaussians evaluated at their ray peak."""
    out_np = np.ones((6, res, res), dtype=np.float64)
    cdef double[:, :, :] out = out_np
    cdef int N = rel.shape[0]
    cdef int f, k, a, b, i, j, j0, j1, i0, i1, ax
    cdef double mu[3]
    cdef double P[3][3]
    cdef double e[3]
    cdef double lo[2]
    cdef double hi[2]
    cdef double s, zlo, zhi, r, u, v, pd0, pd1, pd2, dpd, dpm, mpm, q, alpha, x0, x1
    with nogil:
        for f in range(6):
            for k in range(N):
                for a in range(3):
                    mu[a] = rots[f, a, 0] * rel[k, 0] + rots[f, a, 1] * rel[k, 1] + rots[f, a, 2] * rel[k, 2]
                for a in range(3):
                    # e_a = 3 sqrt(r_a^T cov r_a), P = R prec R^T
                    s = 0.0
                    for i in range(3):
                        for j in range(3):
                            s = s + rots[f, a, i] * cov[k, i, j] * rots[f, a, j]
                    e[a] = 3.0 * sqrt(s) if s > 0.0 else 0.0
                    for b in range(3):
                        s = 0.0
                        for i in range(3):
                            for j in range(3):
                                s = s + rots[f, a, i] * prec[k, i, j] * rots[f, b, j]
                        P[a][b] = s
                zlo = mu[2] - e[2]
                zhi = mu[2] + e[2]
                if zhi <= near:
                    continue
                if zlo <= near:
                    lo[0] = -1.0
                    lo[1] = -1.0
                    hi[0] = 1.0
                    hi[1] = 1.0
                else:
                    for ax in range(2):
                        x0 = mu[ax] - e[ax]
                        x1 = mu[ax] + e[ax]
                        lo[ax] = min(min(x0 / zlo, x0 / zhi), min(x1 / zlo, x1 / zhi))
                        hi[ax] = max(max(x0 / zlo, x0 / zhi), max(x1 / zlo, x1 / zhi))
                j0 = <int>max(floor((lo[0] + 1.0) * res / 2.0 - 0.5), 0.0)
                j1 = <int>min(ceil((hi[0] + 1.0) * res / 2.0 - 0.5), res - 1.0)
                i0 = <int>max(floor((lo[1] + 1.0) * res / 2.0 - 0.5), 0.0)
                i1 = <int>min(ceil((hi[1] + 1.0) * res / 2.0 - 0.5), res - 1.0)
                mpm = 0.0
                for a in range(3):
                    for b in range(3):
                        mpm = mpm + mu[a] * P[a][b] * mu[b]
                for i in range(i0, i1 + 1):
                    v = (i + 0.5) * 2.0 / res - 1.0
                    for j in range(j0, j1 + 1):
                        u = (j + 0.5) * 2.0 / res - 1.0
                        pd0 = P[0][0] * u + P[0][1] * v + P[0][2]
                        pd1 = P[1][0] * u + P[1][1] * v + P[1][2]
                        pd2 = P[2][0] * u + P[2][1] * v + P[2][2]
                        dpd = pd0 * u + pd1 * v + pd2
                        dpm = pd0 * mu[0] + pd1 * mu[1] + pd2 * mu[2]
                        if dpm <= 0.0 or dpd <= 0.0:
                            continue
                        q = mpm - dpm * dpm / dpd
                        if q > 9.0:
                            continue
                        alpha = opacity[k] * exp(-0.5 * q)
                        if alpha > ALPHA_MAX:
                            alpha = ALPHA_MAX
                        out[f, i, j] *= 1.0 - alpha
    return out_np
