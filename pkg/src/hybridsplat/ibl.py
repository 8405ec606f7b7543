"""Split-sum image-based lighting: BRDF lookup table, GGX-prefiltered mip chains
and differentiable cubemap / LUT lookups.

Roughness ``r`` maps to GGX ``a = r**2`` and Smith-Schlick ``k = r**4 / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import torch

from .cubemap import Cubemap, bilinear_taps, box_downsample, padded_index, texel_directions

LUT_RES = 64
LUT_SAMPLES = 1024
MIN_MIP_RES = 4


def hammersley(n: int) -> np.ndarray:
    """``(n, 2)`` Hammersley points (radical inverse base 2)."""
    i = np.arange(n, dtype=np.uint64)
    bits = i.copy()
    bits = ((bits << np.uint64(16)) | (bits >> np.uint64(16))) & np.uint64(0xFFFFFFFF)
    bits = ((bits & np.uint64(0x55555555)) << np.uint64(1)) | ((bits & np.uint64(0xAAAAAAAA)) >> np.uint64(1))
    bits = ((bits & np.uint64(0x33333333)) << np.uint64(2)) | ((bits & np.uint64(0xCCCCCCCC)) >> np.uint64(2))
    bits = ((bits & np.uint64(0x0F0F0F0F)) << np.uint64(4)) | ((bits & np.uint64(0xF0F0F0F0)) >> np.uint64(4))
    bits = ((bits & np.uint64(0x00FF00FF)) << np.uint64(8)) | ((bits & np.uint64(0xFF00FF00)) >> np.uint64(8))
    return np.stack([i.astype(np.float64) / n, bits.astype(np.float64) * 2.3283064365386963e-10], axis=-1)


def ggx_half_vectors(xi: np.ndarray, a) -> np.ndarray:
    """Tangent-space half vectors distributed as ``D(h) (n.h)``; ``a`` broadcasts."""
    a = np.asarray(a, dtype=np.float64)[..., None]
    phi = 2.0 * np.pi * xi[:, 0]
    cos_t = np.sqrt((1.0 - xi[:, 1]) / (1.0 + (a * a - 1.0) * xi[:, 1]))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    return np.stack([np.cos(phi) * sin_t, np.sin(phi) * sin_t, cos_t], axis=-1)


def tangent_frame(n: np.ndarray):
    up = np.where(np.abs(n[..., 2:3]) < 0.999, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t = np.cross(up, n)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    return t, np.cross(n, t)


def smith_g1(ndotx, k):
    return ndotx / (ndotx * (1.0 - k) + k)


# ---------------------------------------------------------------- BRDF LUT


@dataclass
class BrdfLut:
    """Split-sum scale/bias table over ``(n.v, roughness)``.

    ``table[i, j]`` holds ``(A, B)`` at roughness ``(i + .5)/res`` and
    ``n.v = (j + .5)/res``.
    """

    table: np.ndarray

    @property
    def res(self) -> int:
        return self.table.shape[0]

    def lookup(self, nv, r) -> np.ndarray:
        """Bilinear ``(A, B)`` at arrays ``nv``, ``r``; returns ``(..., 2)``."""
        return lut_lookup_t(torch.as_tensor(self.tensor()), torch.as_tensor(np.asarray(nv, dtype=np.float64)),
                            torch.as_tensor(np.asarray(r, dtype=np.float64))).numpy()

    def tensor(self) -> torch.Tensor:
        return torch.tensor(self.table, dtype=torch.float64)


def integrate_brdf(nv, r, samples: int = LUT_SAMPLES) -> np.ndarray:
    """Importance-sampled ``(A, B)`` for arrays ``nv``, ``r`` (same shape)."""
    nv = np.clip(np.asarray(nv, dtype=np.float64), 1e-4, 1.0)
    r = np.asarray(r, dtype=np.float64)
    shape = np.broadcast(nv, r).shape
    nv, r = np.broadcast_to(nv, shape).reshape(-1), np.broadcast_to(r, shape).reshape(-1)
    xi = hammersley(samples)
    a = r * r
    k = r ** 4 / 2.0
    h = ggx_half_vectors(xi, a)  # (M, S, 3), n = +z
    v = np.stack([np.sqrt(1.0 - nv * nv), np.zeros_like(nv), nv], axis=-1)[:, None, :]
    vh = (v * h).sum(-1)
    l = 2.0 * vh[..., None] * h - v
    nl = l[..., 2]
    nh = h[..., 2]
    ok = (nl > 0) & (vh > 0)
    g = smith_g1(nv[:, None], k[:, None]) * smith_g1(np.maximum(nl, 1e-12), k[:, None])
    g_vis = np.where(ok, g * vh / np.maximum(nh * nv[:, None], 1e-12), 0.0)
    fc = (1.0 - np.clip(vh, 0.0, 1.0)) ** 5
    A = ((1.0 - fc) * g_vis).mean(axis=1)
    B = (fc * g_vis).mean(axis=1)
    return np.stack([A, B], axis=-1).reshape(shape + (2,))


@lru_cache(maxsize=4)
def build_brdf_lut(res: int = LUT_RES, samples: int = LUT_SAMPLES, seed: int = 0) -> BrdfLut:
    """Split-sum table; Hammersley points make it identical for every ``seed``.

    Texels whose integral exceeds unit energy are rescaled to ``A + B = 1``.
    """
    c = (np.arange(res) + 0.5) / res
    r, nv = np.meshgrid(c, c, indexing="ij")
    rows = [integrate_brdf(nv[i], r[i], samples) for i in range(res)]
    table = np.stack(rows).astype(np.float64)
    # k = r^4/2 over-estimates shadowing-free energy at grazing angles; keep A + B <= 1
    total = table.sum(-1, keepdims=True)
    table = table / np.maximum(total, 1.0)
    table.setflags(write=False)
    return BrdfLut(table)


def _bilerp_weights_t(x: torch.Tensor, size: int):
    """Clamp-to-edge linear interpolation along one axis with texel centers at ``(i + .5)/size``."""
    s = torch.clamp(x * size - 0.5, 0.0, size - 1.0)
    i0 = torch.clamp(torch.floor(s.detach()), 0, max(size - 2, 0)).long()
    f = s - i0.to(s.dtype)
    i1 = torch.clamp(i0 + 1, max=size - 1)
    return i0, i1, f


def lut_lookup_t(table: torch.Tensor, nv: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    """Differentiable bilinear LUT lookup; returns ``(..., 2)``."""
    res = table.shape[0]
    j0, j1, fj = _bilerp_weights_t(nv, res)
    i0, i1, fi = _bilerp_weights_t(r, res)
    fj, fi = fj[..., None], fi[..., None]
    top = table[i0, j0] * (1 - fj) + table[i0, j1] * fj
    bot = table[i1, j0] * (1 - fj) + table[i1, j1] * fj
    return top * (1 - fi) + bot * fi


# ---------------------------------------------------------------- cubemap lookup (torch)

# per face: (major axis, sign, sc axis, sc sign, tc axis, tc sign)
_FACE_AXES = np.array(
    [
        [0, 1, 2, -1, 1, -1],
        [0, -1, 2, 1, 1, -1],
        [1, 1, 0, 1, 2, 1],
        [1, -1, 0, 1, 2, -1],
        [2, 1, 0, 1, 1, -1],
        [2, -1, 0, -1, 1, -1],
    ]
)


@lru_cache(maxsize=16)
def _padded_index_t(res: int) -> torch.Tensor:
    return torch.from_numpy(np.array(padded_index(res), dtype=np.int64))


def cube_taps_t(dirs: torch.Tensor, res: int):
    """Seamless bilinear taps with weights differentiable w.r.t. ``dirs``.

    Returns ``(idx (..., 4) long, w (..., 4))``; ``idx`` indexes the flattened
    ``(6 * res * res)`` texel array.
    """
    d = dirs.detach().numpy()
    ad = np.abs(d)
    xmaj = (ad[..., 0] >= ad[..., 1]) & (ad[..., 0] >= ad[..., 2])
    ymaj = ~xmaj & (ad[..., 1] >= ad[..., 2])
    axis = np.where(xmaj, 0, np.where(ymaj, 1, 2))
    comp = np.take_along_axis(d, axis[..., None], -1)[..., 0]
    face = axis * 2 + (comp <= 0)
    tab = _FACE_AXES[face]
    g = lambda col: torch.as_tensor(tab[..., col])
    gather = lambda col: torch.gather(dirs, -1, g(col)[..., None].long())[..., 0]
    ma = torch.clamp(gather(0) * g(1).to(dirs.dtype), min=1e-12)
    u = gather(2) * g(3).to(dirs.dtype) / ma
    v = gather(4) * g(5).to(dirs.dtype) / ma
    s = (u + 1.0) * 0.5 * res + 0.5
    t = (v + 1.0) * 0.5 * res + 0.5
    j0 = torch.clamp(torch.floor(s.detach()), 0, res).long()
    i0 = torch.clamp(torch.floor(t.detach()), 0, res).long()
    fs = torch.clamp(s - j0.to(s.dtype), 0.0, 1.0)
    ft = torch.clamp(t - i0.to(t.dtype), 0.0, 1.0)
    pad = _padded_index_t(res)
    f = torch.as_tensor(face)
    idx = torch.stack([pad[f, i0, j0], pad[f, i0, j0 + 1], pad[f, i0 + 1, j0], pad[f, i0 + 1, j0 + 1]], dim=-1)
    w = torch.stack([(1 - fs) * (1 - ft), fs * (1 - ft), (1 - fs) * ft, fs * ft], dim=-1)
    return idx, w


def sample_cube_t(faces: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup of ``faces (6, R, R, C)`` at unit ``dirs (..., 3)``."""
    res, ch = faces.shape[1], faces.shape[3]
    idx, w = cube_taps_t(dirs, res)
    flat = faces.reshape(-1, ch)
    return (flat[idx] * w[..., None]).sum(-2)


# ---------------------------------------------------------------- prefiltering


def mip_count(res: int) -> int:
    return max(1, int(math.log2(max(res, MIN_MIP_RES) // MIN_MIP_RES)) + 1)


def level_samples(level: int, levels: int, coarsest: int = 1024, minimum: int = 64) -> int:
    return max(minimum, coarsest >> (2 * (levels - 1 - level)))


SOURCE_MIN_RES = 32


def source_res(res: int, level: int) -> int:
    """Resolution of the box-filtered base that level ``level`` gathers from."""
    return min(res, max(2 * (res >> level), SOURCE_MIN_RES))


@lru_cache(maxsize=8)
def prefilter_operator(res: int, levels: int, coarsest: int = 1024, seed: int = 0):
    """Sparse GGX prefilter per mip level.

    Level ``k`` (resolution ``res >> k``, roughness ``k/(levels-1)``) is a
    row-normalized ``n.l``-weighted sum of GGX samples (N = V = R assumption)
    gathered from the base map box-filtered to :func:`source_res`.  Returns a
    list of ``scipy.sparse.csr_matrix`` of shape ``(6 rk^2, 6 sk^2)``; entry 0
    is ``None`` (identity).
    """
    rng = np.random.default_rng(seed)
    ops = [None]
    for k in range(1, levels):
        rk = max(res >> k, 1)
        sk = source_res(res, k)
        r = k / (levels - 1)
        n_s = level_samples(k, levels, coarsest)
        xi = (hammersley(n_s)[None] + rng.uniform(size=(1, 1, 2))) % 1.0
        n = texel_directions(rk).reshape(-1, 3)
        t, b = tangent_frame(n)
        h = ggx_half_vectors(xi[0], r * r)  # (S, 3)
        hw = h[None, :, 0:1] * t[:, None] + h[None, :, 1:2] * b[:, None] + h[None, :, 2:3] * n[:, None]
        nh = (hw * n[:, None]).sum(-1, keepdims=True)
        l = 2.0 * nh * hw - n[:, None]
        nl = (l * n[:, None]).sum(-1)
        w = np.maximum(nl, 0.0)
        idx, bw = bilinear_taps(l, sk)  # (T, S, 4)
        vals = (w[..., None] * bw).reshape(n.shape[0], -1)
        rows = np.repeat(np.arange(n.shape[0]), vals.shape[1])
        m = sp.csr_matrix((vals.ravel(), (rows, idx.reshape(n.shape[0], -1).ravel())), shape=(n.shape[0], 6 * sk * sk))
        m.sum_duplicates()
        norm = np.asarray(m.sum(axis=1)).ravel()
        m = sp.diags(1.0 / np.maximum(norm, 1e-12)) @ m
        ops.append(m.tocsr())
    return ops


def _downsample_to(faces: np.ndarray, res: int) -> np.ndarray:
    while faces.shape[1] > res:
        faces = box_downsample(faces)
    return faces


def prefilter_cubemap(cubemap: Cubemap, levels: int | None = None, coarsest_samples: int = 1024) -> Cubemap:
    """Return a copy of ``cubemap`` with its GGX-prefiltered mip chain attached."""
    res, ch = cubemap.face_res, cubemap.channels
    levels = levels or mip_count(res)
    ops = prefilter_operator(res, levels, coarsest_samples)
    base = cubemap.faces.astype(np.float64)
    mips = [base]
    for k in range(1, levels):
        rk = max(res >> k, 1)
        src = _downsample_to(base, source_res(res, k))
        mips.append((ops[k] @ src.reshape(-1, ch)).reshape(6, rk, rk, ch))
    return Cubemap(cubemap.faces.copy(), [m.astype(np.float32) for m in mips], cubemap.signed)


@lru_cache(maxsize=8)
def _torch_ops(res: int, levels: int, coarsest: int):
    out = [None]
    for m in prefilter_operator(res, levels, coarsest)[1:]:
        coo = m.tocoo()
        idx = torch.as_tensor(np.stack([coo.row, coo.col]), dtype=torch.long)
        out.append(torch.sparse_coo_tensor(idx, torch.as_tensor(coo.data), coo.shape, check_invariants=False).coalesce())
    return out


def mip_chain_t(faces: torch.Tensor, levels: int | None = None, coarsest_samples: int = 1024) -> list:
    """Differentiable prefiltered chain of ``faces (6, R, R, C)``."""
    res, ch = faces.shape[1], faces.shape[3]
    levels = levels or mip_count(res)
    ops = _torch_ops(res, levels, coarsest_samples)
    mips = [faces]
    pyramid = {res: faces}
    src = faces
    while src.shape[1] > 1 and src.shape[1] % 2 == 0:
        r2 = src.shape[1] // 2
        src = src.reshape(6, r2, 2, r2, 2, ch).mean(dim=(2, 4))
        pyramid[r2] = src
    for k in range(1, levels):
        rk = max(res >> k, 1)
        src = pyramid[source_res(res, k)]
        mips.append(torch.sparse.mm(ops[k].to(faces.dtype), src.reshape(-1, ch)).reshape(6, rk, rk, ch))
    return mips


def sample_mips_t(mips: list, dirs: torch.Tensor, roughness: torch.Tensor) -> torch.Tensor:
    """Trilinear lookup: bilinear per level, linear in ``roughness * (levels - 1)``."""
    levels = len(mips)
    if levels == 1:
        return sample_cube_t(mips[0], dirs)
    lv = torch.clamp(roughness, 0.0, 1.0) * (levels - 1)
    out = 0.0
    for k, m in enumerate(mips):
        w = torch.clamp(1.0 - torch.abs(lv - k), min=0.0)
        if not bool((w > 0).any()):
            continue
        out = out + sample_cube_t(m, dirs) * w[..., None]
    return out
