"""Hybrid branch: per-splat radiance-transfer shading, deferred split-sum
reflection from the learnable reflection map, and their intensity blend.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .cubemap import Cubemap
from .ibl import BrdfLut, build_brdf_lut, lut_lookup_t, mip_chain_t, sample_mips_t
from .raster import GBuffer, rasterize_tensors, splat_normals_t
from .scene import GaussianSplat, ShVector, TransferDecoder

MIN_ALPHA = 0.5


def reflect(v, n):
    """Mirror ``v`` (pointing away from the surface) about ``n``: ``2(n.v)n - v``."""
    if isinstance(v, torch.Tensor) or isinstance(n, torch.Tensor):
        v, n = torch.as_tensor(v), torch.as_tensor(n)
        return 2.0 * (n * v).sum(-1, keepdim=True) * n - v
    v = np.asarray(v, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return 2.0 * (n * v).sum(-1, keepdims=True) * n - v


def _unit(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return x / torch.clamp(x.norm(dim=-1, keepdim=True), min=eps)


# ---------------------------------------------------------------- forward (per splat)


def diffuse_rt_t(rho_d: torch.Tensor, c_t: torch.Tensor, light: torch.Tensor) -> torch.Tensor:
    """``rho_d * max(0, c_t . light)``; ``c_t (N, 9)``, ``light (9, C)``."""
    return rho_d * torch.clamp(c_t @ light, min=0.0)


def decode_transfer_t(decoder: dict, f_t: torch.Tensor, o: torch.Tensor) -> torch.Tensor:
    h = torch.relu(o @ decoder["w1"].T + decoder["b1"])
    f = f_t.expand(h.shape[:-1] + (f_t.shape[-1],))
    h = torch.relu(torch.cat([h, f], dim=-1) @ decoder["w2"].T + decoder["b2"])
    return h @ decoder["w3"].T + decoder["b3"]


def specular_rt_t(rho_s, decoder: dict, f_t, o, light) -> torch.Tensor:
    """``rho_s * max(0, G(f_t, o) . light)`` with the rectifier after the dot product."""
    return rho_s * torch.clamp(decode_transfer_t(decoder, f_t, o) @ light, min=0.0)


def _decoder_tensors(decoder: TransferDecoder) -> dict:
    return {p: torch.as_tensor(np.asarray(getattr(decoder, p), dtype=np.float64)) for p in TransferDecoder.PARAMS}


def shade_diffuse_rt(splat: GaussianSplat, sh_light: ShVector) -> np.ndarray:
    """View-independent radiance of one splat, ``(3,)``."""
    t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    return diffuse_rt_t(t(splat.rho_d)[None], t(splat.c_t)[None], t(sh_light.coeffs))[0].numpy()


def decode_transfer(decoder: TransferDecoder, f_t, o) -> np.ndarray:
    """Transfer coefficients ``G(f_t, o)``, ``(..., 9)``."""
    return decoder(f_t, o)


def shade_specular_rt(splat: GaussianSplat, sh_light: ShVector, decoder: TransferDecoder, o) -> np.ndarray:
    """View-dependent radiance of one splat for reflection direction ``o``."""
    t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    out = specular_rt_t(t(splat.rho_s)[None], _decoder_tensors(decoder), t(splat.f_t)[None], t(o)[None], t(sh_light.coeffs))
    return out[0].numpy()


# ---------------------------------------------------------------- deferred (per pixel)


def split_sum_reflection_t(normal, view, tint, roughness, mips: list, lut: torch.Tensor) -> torch.Tensor:
    """``R_t * E_pref(reflect(v, n), R_r) * (A + B)`` per pixel (Fresnel folded into the tint)."""
    nv = torch.clamp((normal * view).sum(-1), 1e-4, 1.0)
    o = _unit(reflect(view, normal))
    env = sample_mips_t(mips, o, roughness)
    ab = lut_lookup_t(lut, nv, roughness)
    return tint * env * (ab[..., 0] + ab[..., 1])[..., None]


def view_directions_t(camera, dtype=torch.float64) -> torch.Tensor:
    """Unit vectors from each pixel's surface point towards the camera, ``(H, W, 3)``."""
    return -torch.as_tensor(camera.pixel_rays(), dtype=dtype)


def coverage_mask(alpha: torch.Tensor, min_alpha: float = MIN_ALPHA) -> torch.Tensor:
    """Alpha where it reaches ``min_alpha``, zero elsewhere (deferred pixels fall back to background)."""
    return torch.where(alpha.detach() >= min_alpha, alpha, torch.zeros_like(alpha))


def cubemap_mips_t(cubemap: Cubemap) -> list:
    mips = cubemap.mips if cubemap.mips is not None else [cubemap.faces]
    return [torch.as_tensor(np.asarray(m, dtype=np.float64)) for m in mips]


def deferred_reflection(gbuffer: GBuffer, reflection_map, brdf_lut: BrdfLut | None = None,
                        min_alpha: float = MIN_ALPHA, background=0.0) -> torch.Tensor:
    """Reflection image from a G-buffer with ``normal``, ``R_t`` and ``R_r`` channels.

    ``reflection_map`` is a prefiltered :class:`Cubemap` or a list of mip
    tensors.  Pixels with coverage below ``min_alpha`` get ``background``.
    """
    lut = (brdf_lut or build_brdf_lut()).tensor()
    mips = cubemap_mips_t(reflection_map) if isinstance(reflection_map, Cubemap) else reflection_map
    tint = gbuffer.normalized("R_t")
    rough = gbuffer.normalized("R_r")[..., 0]
    c_ref = split_sum_reflection_t(gbuffer.normal(), view_directions_t(gbuffer.camera), tint, rough, mips, lut)
    keep = (gbuffer.alpha.detach() >= min_alpha)[..., None]
    bg = torch.as_tensor(background, dtype=c_ref.dtype)
    return torch.where(keep, c_ref, bg.expand_as(c_ref))


def blend_hybrid(c_r, c_ref, r_i):
    """``C_r (1 - R_i) + C_ref R_i``; ``r_i`` broadcasts over the channel axis."""
    if isinstance(c_r, np.ndarray) and isinstance(c_ref, np.ndarray):
        r_i = np.asarray(r_i, dtype=np.float64)
    if getattr(r_i, "ndim", 0) == getattr(c_r, "ndim", 0) - 1:
        r_i = r_i[..., None]
    return c_r * (1.0 - r_i) + c_ref * r_i


# ---------------------------------------------------------------- full branch


@dataclass
class HybridOutput:
    image: torch.Tensor  # composited (H, W, 3)
    radiance: torch.Tensor  # coverage-normalized C_r
    reflection: torch.Tensor  # C_ref
    intensity: torch.Tensor  # coverage-normalized R_i, (H, W)
    gbuffer: GBuffer


def splat_radiance_t(model, camera, view_dependent: bool = True) -> torch.Tensor:
    """Per-splat outgoing radiance ``C_d + C_s`` for a camera, ``(N, 3)``."""
    s = model.splat
    light = model.sh_light
    c = diffuse_rt_t(s["rho_d"], s["c_t"], light)
    if view_dependent:
        n = splat_normals_t(s["rotation"], s["log_scale"], s["position"], camera.center)
        v = _unit(torch.as_tensor(camera.center, dtype=n.dtype) - s["position"])
        o = _unit(reflect(v, n))
        c = c + specular_rt_t(s["rho_s"], model.decoder, s["f_t"], o, light)
    return c


def render_hybrid(model, camera, lut: BrdfLut | None = None, mips: list | None = None, view_dependent: bool = True,
                  background=0.0, min_alpha: float = MIN_ALPHA, extra: dict | None = None) -> HybridOutput:
    """Render the hybrid branch of a :class:`~hybridsplat.model.SceneTensors`.

    ``mips`` defaults to the differentiable prefiltered chain of the model's
    reflection map.  ``extra`` adds payload channels to the G-buffer.
    """
    lut_t = (lut or build_brdf_lut()).tensor()
    if mips is None:
        mips = mip_chain_t(model.reflection_map)
    s = model.splat
    channels = {
        "C_r": splat_radiance_t(model, camera, view_dependent),
        "normal": "normal",
        "depth": "depth",
        "R_t": s["R_t"],
        "R_r": s["R_r"],
        "R_i": s["R_i"],
    }
    channels.update(extra or {})
    gb = rasterize_tensors(s, camera, channels)
    eps = 1e-8
    cov = torch.clamp(gb.alpha, min=eps)[..., None]
    c_r = gb["C_r"] / cov
    r_i = (gb["R_i"] / cov)[..., 0]
    c_ref = split_sum_reflection_t(gb.normal(), view_directions_t(camera), gb["R_t"] / cov, (gb["R_r"] / cov)[..., 0], mips, lut_t)
    # the forward radiance is composited with its own coverage; deferred reflection only where coverage is solid
    w_ref = coverage_mask(gb.alpha, min_alpha)[..., None] * r_i[..., None]
    fg = gb["C_r"] * (1.0 - r_i[..., None]) + c_ref * w_ref
    bg = torch.as_tensor(background, dtype=fg.dtype)
    image = fg + (1.0 - gb.alpha[..., None] * (1.0 - r_i[..., None]) - w_ref) * bg
    return HybridOutput(image, c_r, c_ref, r_i, gb)
