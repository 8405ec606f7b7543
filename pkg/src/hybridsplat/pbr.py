"""Physically-based deferred branch: baked voxel visibility, SH irradiance
texture, GGX microfacet BRDF and split-sum specular.

Roughness ``r`` gives GGX ``a = r**2`` and Smith-Schlick ``k = r**4 / 2``;
``F0 = 0.04 (1 - m) + m c``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import raster
from .cubemap import Cubemap, face_uv_to_dir, texel_directions, texel_solid_angles
from .errors import InputError, PreconditionError
from .ibl import BrdfLut, _bilerp_weights_t, build_brdf_lut, lut_lookup_t, mip_chain_t, sample_mips_t
from .sh import ShVector, cosine_lobe_scale, cubemap_to_sh, sh_basis

GRID_RES = 128
BAKE_FACE_RES = 32
BBOX_DILATION = 0.1
IRRADIANCE_RES = 64
DIELECTRIC_F0 = 0.04
VIS_OFFSET = 1.5  # voxels along the normal; clears the interpolation footprint of the surface
MIN_ALPHA = 0.5

_MAGIC = b"VISGRID\0"
_VERSION = 1


# ---------------------------------------------------------------- visibility grid


@dataclass
class VisibilityGrid:
    """SH-encoded directional visibility at voxel centers.

    ``coeffs[i, j, k]`` belongs to the voxel centered at
    ``lo + (i + .5, j + .5, k + .5) * cell``.
    """

    lo: np.ndarray
    hi: np.ndarray
    coeffs: np.ndarray  # (R, R, R, bands**2) float32

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float32)
        if self.coeffs.ndim != 4 or len(set(self.coeffs.shape[:3])) != 1:
            raise InputError("visibility grid must be a cube of SH records")
        if np.any(self.hi <= self.lo):
            raise InputError("degenerate visibility grid bounds")

    @property
    def res(self) -> int:
        return self.coeffs.shape[0]

    @property
    def bands(self) -> int:
        return int(round(math.sqrt(self.coeffs.shape[3])))

    @property
    def cell(self) -> np.ndarray:
        return (self.hi - self.lo) / self.res

    def centers(self) -> np.ndarray:
        """Voxel centers, ``(R, R, R, 3)``."""
        g = (np.arange(self.res) + 0.5)
        i, j, k = np.meshgrid(g, g, g, indexing="ij")
        return self.lo + np.stack([i, j, k], axis=-1) * self.cell

    @classmethod
    def constant(cls, value: float, lo, hi, res: int = 8, bands: int = 3) -> "VisibilityGrid":
        c = np.zeros((res, res, res, bands * bands), dtype=np.float32)
        c[..., 0] = value * 2.0 * math.sqrt(math.pi)
        return cls(lo, hi, c)

    def save(self, path) -> Path:
        path = Path(path)
        header = _MAGIC + struct.pack("<III", _VERSION, self.res, self.coeffs.shape[3]) + struct.pack("<6d", *self.lo, *self.hi)
        path.write_bytes(header + self.coeffs.astype("<f4").tobytes(order="C"))
        return path

    @classmethod
    def load(cls, path) -> "VisibilityGrid":
        data = Path(path).read_bytes()
        if data[:8] != _MAGIC:
            raise InputError(f"{path}: not a visibility grid")
        version, res, nc = struct.unpack_from("<III", data, 8)
        if version != _VERSION:
            raise InputError(f"{path}: unsupported visibility grid version {version}")
        box = struct.unpack_from("<6d", data, 20)
        body = np.frombuffer(data, dtype="<f4", offset=68)
        if body.size != res ** 3 * nc:
            raise InputError(f"{path}: truncated visibility grid")
        return cls(np.array(box[:3]), np.array(box[3:]), body.reshape(res, res, res, nc).copy())


def grid_bounds(positions: np.ndarray, dilation: float = BBOX_DILATION):
    """Splat AABB grown by ``dilation`` of its extent on every side (unit box if empty)."""
    if positions.shape[0] == 0:
        return -np.ones(3), np.ones(3)
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    ext = np.maximum(hi - lo, 1e-3)
    return lo - dilation * ext, hi + dilation * ext


def face_rotations() -> np.ndarray:
    """World-to-camera rotations whose pinhole pixels coincide with cubemap texels, ``(6, 3, 3)``."""
    out = np.empty((6, 3, 3))
    for f in range(6):
        o = face_uv_to_dir(f, 0.0, 0.0)
        du = face_uv_to_dir(f, 1.0, 0.0) * math.sqrt(2.0) - o
        dv = face_uv_to_dir(f, 0.0, 1.0) * math.sqrt(2.0) - o
        out[f] = np.stack([du, dv, o])
    return out


_FACE_ROTS = np.ascontiguousarray(face_rotations())


def occlusion_cubemap(center, positions, cov3d, opacity, res: int = BAKE_FACE_RES, near: float = 1e-3,
                      precision=None) -> np.ndarray:
    """Transmittance seen from ``center``: white background, black splats; ``(6, res, res)``.

    Each texel composites every splat at the peak of its density along the
    texel ray, which stays exact for splats close to the cube center.
    """
    cov3d = np.ascontiguousarray(cov3d, dtype=np.float64)
    if precision is None:
        precision = np.linalg.inv(cov3d)
    rel = np.ascontiguousarray(positions - np.asarray(center, dtype=np.float64))
    return raster._kernels.occlusion(rel, np.ascontiguousarray(precision), cov3d,
                                     np.ascontiguousarray(opacity, dtype=np.float64), _FACE_ROTS, res, near)


def bake_visibility(scene, res: int = GRID_RES, face_res: int = BAKE_FACE_RES, bands: int = 3,
                    dilation: float = BBOX_DILATION, progress=None) -> VisibilityGrid:
    """Render an occupancy cubemap at every voxel center and store its SH projection."""
    splats = scene.splats
    lo, hi = grid_bounds(splats.position, dilation)
    if len(splats) == 0:
        return VisibilityGrid.constant(1.0, lo, hi, res, bands)
    proj = (sh_basis(texel_directions(face_res).reshape(-1, 3), bands) * texel_solid_angles(face_res).reshape(-1, 1))
    cov3d = np.ascontiguousarray(splats.covariances())
    prec = np.linalg.inv(cov3d)
    opacity = 1.0 / (1.0 + np.exp(-splats.opacity_logit.reshape(-1)))
    grid = VisibilityGrid(lo, hi, np.zeros((res, res, res, bands * bands), dtype=np.float32))
    centers = grid.centers().reshape(-1, 3)
    flat = grid.coeffs.reshape(-1, bands * bands)
    for v, c in enumerate(centers):
        t = occlusion_cubemap(c, splats.position, cov3d, opacity, face_res, precision=prec)
        flat[v] = t.reshape(-1) @ proj
        if progress is not None and v % 256 == 0:
            progress(v, centers.shape[0])
    return grid


def _trilinear_coeffs(grid: VisibilityGrid, x: np.ndarray):
    g = (x - grid.lo) / grid.cell - 0.5
    g = np.clip(g, 0.0, grid.res - 1.0)
    i0 = np.clip(np.floor(g).astype(np.int64), 0, max(grid.res - 2, 0))
    f = g - i0
    i1 = np.minimum(i0 + 1, grid.res - 1)
    out = 0.0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1 - f[:, 0]
        ix = i1[:, 0] if dx else i0[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1 - f[:, 1]
            iy = i1[:, 1] if dy else i0[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1 - f[:, 2]
                iz = i1[:, 2] if dz else i0[:, 2]
                out = out + grid.coeffs[ix, iy, iz].astype(np.float64) * (wx * wy * wz)[:, None]
    return out


def query_visibility(grid: VisibilityGrid, x, n, offset: float = 0.0) -> np.ndarray:
    """Cosine-weighted hemispherical visibility about ``n`` at ``x``.

    ``x`` is moved ``offset`` voxel sizes along ``n`` before the lookup.
    Points outside the grid see ``V = 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    shape = np.broadcast_shapes(x.shape, n.shape)[:-1]
    x = np.broadcast_to(x, shape + (3,)).reshape(-1, 3)
    n = np.broadcast_to(n, shape + (3,)).reshape(-1, 3)
    if offset:
        x = x + offset * float(grid.cell.max()) * n
    inside = np.all((x >= grid.lo) & (x <= grid.hi), axis=1)
    v = np.ones(x.shape[0])
    if inside.any():
        c = _trilinear_coeffs(grid, x[inside])
        lobe = sh_basis(n[inside], grid.bands) * cosine_lobe_scale(grid.bands)
        v[inside] = np.clip((c * lobe).sum(-1) / math.pi, 0.0, 1.0)
    return v.reshape(shape)


# ---------------------------------------------------------------- irradiance


def oct_encode(n):
    """Unit directions to octahedral coordinates in [0, 1]^2 (numpy or torch)."""
    lib = torch if isinstance(n, torch.Tensor) else np
    s = lib.abs(n[..., 0]) + lib.abs(n[..., 1]) + lib.abs(n[..., 2])
    s = torch.clamp(s, min=1e-12) if lib is torch else np.maximum(s, 1e-12)
    px, py, pz = n[..., 0] / s, n[..., 1] / s, n[..., 2] / s
    sgn = lambda a: lib.where(a >= 0, 1.0, -1.0)
    fx = (1.0 - lib.abs(py)) * sgn(px)
    fy = (1.0 - lib.abs(px)) * sgn(py)
    neg = pz < 0
    u = lib.where(neg, fx, px)
    v = lib.where(neg, fy, py)
    return lib.stack([u * 0.5 + 0.5, v * 0.5 + 0.5], -1) if lib is np else torch.stack([u * 0.5 + 0.5, v * 0.5 + 0.5], -1)


def oct_decode(uv: np.ndarray) -> np.ndarray:
    p = np.asarray(uv, dtype=np.float64) * 2.0 - 1.0
    x, y = p[..., 0], p[..., 1]
    z = 1.0 - np.abs(x) - np.abs(y)
    neg = z < 0
    xn = np.where(neg, (1.0 - np.abs(y)) * np.sign(x + (x == 0)), x)
    yn = np.where(neg, (1.0 - np.abs(x)) * np.sign(y + (y == 0)), y)
    d = np.stack([xn, yn, z], -1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _oct_texel_basis(res: int, bands: int = 3) -> np.ndarray:
    c = (np.arange(res) + 0.5) / res
    v, u = np.meshgrid(c, c, indexing="ij")
    return sh_basis(oct_decode(np.stack([u, v], -1)), bands) * cosine_lobe_scale(bands)


@dataclass
class IrradianceTexture:
    """Octahedral map ``texture[row=v, col=u]`` of cosine-convolved irradiance."""

    texture: np.ndarray  # (R, R, C)

    def lookup(self, n) -> np.ndarray:
        t = torch.as_tensor(self.texture, dtype=torch.float64)
        return sample_octahedral_t(t, torch.as_tensor(np.asarray(n, dtype=np.float64))).numpy()


def build_irradiance(env_sh: ShVector, res: int = IRRADIANCE_RES) -> IrradianceTexture:
    """Irradiance ``sum_j A_l c_j Y_j(n)`` tabulated over the octahedral square."""
    basis = _oct_texel_basis(res, env_sh.bands)
    return IrradianceTexture(np.maximum(basis @ env_sh.coeffs, 0.0))


def sample_octahedral_t(texture: torch.Tensor, n: torch.Tensor) -> torch.Tensor:
    res = texture.shape[0]
    uv = oct_encode(n)
    j0, j1, fu = _bilerp_weights_t(uv[..., 0], res)
    i0, i1, fv = _bilerp_weights_t(uv[..., 1], res)
    fu, fv = fu[..., None], fv[..., None]
    top = texture[i0, j0] * (1 - fu) + texture[i0, j1] * fu
    bot = texture[i1, j0] * (1 - fu) + texture[i1, j1] * fu
    return top * (1 - fv) + bot * fv


def irradiance_texture_t(env_faces: torch.Tensor, res: int = IRRADIANCE_RES) -> torch.Tensor:
    """Differentiable irradiance texture of an environment cubemap ``(6, R, R, C)``."""
    fr = env_faces.shape[1]
    proj = torch.as_tensor(sh_basis(texel_directions(fr).reshape(-1, 3), 3) * texel_solid_angles(fr).reshape(-1, 1))
    coeffs = proj.T.to(env_faces.dtype) @ env_faces.reshape(-1, env_faces.shape[-1])
    basis = torch.as_tensor(_oct_texel_basis(res), dtype=env_faces.dtype)
    return torch.clamp(basis @ coeffs, min=0.0)


# ---------------------------------------------------------------- BRDF


def fresnel_f0(albedo, metallic):
    return DIELECTRIC_F0 * (1.0 - metallic) + metallic * albedo


def microfacet_eval(n, v, i, albedo, metallic, roughness) -> np.ndarray:
    """GGX specular BRDF ``D F G / (4 (n.v)(n.i))``; inputs broadcast, returns ``(..., 3)``."""
    n, v, i = (np.asarray(a, dtype=np.float64) for a in (n, v, i))
    c = np.asarray(albedo, dtype=np.float64)
    m = np.asarray(metallic, dtype=np.float64)[..., None]
    r = np.asarray(roughness, dtype=np.float64)[..., None]
    h = v + i
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    nh = np.clip((n * h).sum(-1, keepdims=True), 0.0, 1.0)
    nv = np.maximum((n * v).sum(-1, keepdims=True), 1e-6)
    ni = np.maximum((n * i).sum(-1, keepdims=True), 1e-6)
    vh = np.clip((v * h).sum(-1, keepdims=True), 0.0, 1.0)
    a2 = np.maximum(r * r, 1e-4) ** 2
    d = a2 / (math.pi * (nh * nh * (a2 - 1.0) + 1.0) ** 2)
    f0 = fresnel_f0(c, m)
    f = f0 + (1.0 - f0) * (1.0 - vh) ** 5
    k = r ** 4 / 2.0
    g = (nv / (nv * (1.0 - k) + k)) * (ni / (ni * (1.0 - k) + k))
    return d * f * g / (4.0 * nv * ni)


# ---------------------------------------------------------------- per-pixel shading (torch)


def pbr_diffuse_t(albedo, metallic, irradiance, visibility, l_ind) -> torch.Tensor:
    """``(1 - m) c/pi [V E(n) + (1 - V) L_ind]``; ``metallic``, ``visibility`` are ``(...,)``."""
    v = visibility[..., None]
    return (1.0 - metallic[..., None]) * albedo / math.pi * (v * irradiance + (1.0 - v) * l_ind)


def pbr_specular_t(normal, view, albedo, metallic, roughness, env_mips: list, lut: torch.Tensor, visibility=None):
    """``[F0 A + B] E_pref(reflect(v, n), r)``, times ``V`` when given; back-facing pixels give 0."""
    nv_raw = (normal * view).sum(-1)
    nv = torch.clamp(nv_raw, 1e-4, 1.0)
    o = 2.0 * nv_raw[..., None] * normal - view
    o = o / torch.clamp(o.norm(dim=-1, keepdim=True), min=1e-12)
    ab = lut_lookup_t(lut, nv, roughness)
    f0 = fresnel_f0(albedo, metallic[..., None])
    out = (f0 * ab[..., 0:1] + ab[..., 1:2]) * sample_mips_t(env_mips, o, roughness)
    if visibility is not None:
        out = out * visibility[..., None]
    return torch.where((nv_raw > 0)[..., None], out, torch.zeros_like(out))


def pbr_diffuse(albedo, n, x, l_ind, grid: VisibilityGrid | None, irradiance: IrradianceTexture, metallic=0.0,
                visibility=None) -> np.ndarray:
    """Diffuse term for arrays of pixels; ``visibility`` overrides the grid query."""
    n = np.asarray(n, dtype=np.float64)
    if visibility is None:
        visibility = query_visibility(grid, x, n) if grid is not None else np.ones(n.shape[:-1])
    t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    e = irradiance.lookup(n)
    shape = n.shape[:-1]
    m = np.broadcast_to(np.asarray(metallic, dtype=np.float64), shape)
    return pbr_diffuse_t(t(albedo), t(m), t(e), t(np.broadcast_to(visibility, shape)), t(l_ind)).numpy()


def pbr_specular(n, v, albedo, metallic, roughness, x, env: Cubemap, brdf_lut: BrdfLut | None = None,
                 grid: VisibilityGrid | None = None, spec_occlusion: bool = True) -> np.ndarray:
    """Split-sum specular for arrays of pixels; ``env`` must carry its prefiltered mips."""
    if env.mips is None:
        raise PreconditionError("environment map is not prefiltered")
    n = np.asarray(n, dtype=np.float64)
    shape = n.shape[:-1]
    t = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    vis = None
    if spec_occlusion and grid is not None:
        vis = t(query_visibility(grid, x, n))
    mips = [t(m) for m in env.mips]
    lut = (brdf_lut or build_brdf_lut()).tensor()
    out = pbr_specular_t(t(n), t(np.broadcast_to(v, shape + (3,))), t(np.broadcast_to(albedo, shape + (3,))),
                         t(np.broadcast_to(metallic, shape)), t(np.broadcast_to(roughness, shape)), mips, lut, vis)
    return out.numpy()


# ---------------------------------------------------------------- full branch


@dataclass
class PbrOutput:
    image: torch.Tensor
    diffuse: torch.Tensor
    specular: torch.Tensor
    visibility: torch.Tensor
    gbuffer: raster.GBuffer


PBR_CHANNELS = ("albedo", "metallic", "roughness", "L_ind")


def shade_gbuffer(gb: raster.GBuffer, env_mips: list, irradiance_tex: torch.Tensor, grid: VisibilityGrid,
                  lut: torch.Tensor, spec_occlusion: bool = True, background=0.0, min_alpha: float = MIN_ALPHA,
                  vis_offset: float = VIS_OFFSET) -> PbrOutput:
    """Deferred PBR shading of a G-buffer carrying normal, depth and material channels."""
    from .shading import coverage_mask, view_directions_t

    cov = torch.clamp(gb.alpha, min=1e-8)[..., None]
    n = gb.normal()
    view = view_directions_t(gb.camera, n.dtype)
    albedo = gb["albedo"] / cov
    metal = (gb["metallic"] / cov)[..., 0]
    rough = (gb["roughness"] / cov)[..., 0]
    l_ind = gb["L_ind"] / cov
    x = gb.positions().detach().numpy()
    vis = torch.as_tensor(query_visibility(grid, x, n.detach().numpy(), offset=vis_offset))
    diffuse = pbr_diffuse_t(albedo, metal, sample_octahedral_t(irradiance_tex, n), vis, l_ind)
    specular = pbr_specular_t(n, view, albedo, metal, rough, env_mips, lut, vis if spec_occlusion else None)
    w = coverage_mask(gb.alpha, min_alpha)[..., None]
    bg = torch.as_tensor(background, dtype=n.dtype)
    image = w * (diffuse + specular) + (1.0 - w) * bg
    return PbrOutput(image, diffuse, specular, vis, gb)


def render_pbr(model, camera, lut: BrdfLut | None = None, env_mips: list | None = None, irradiance_tex=None,
               spec_occlusion: bool = True, background=0.0, min_alpha: float = MIN_ALPHA, vis_offset: float = VIS_OFFSET,
               gbuffer: raster.GBuffer | None = None) -> PbrOutput:
    """Render the PBR branch of a :class:`~hybridsplat.model.SceneTensors`.

    Raises :class:`PreconditionError` when no visibility grid is baked.
    """
    if model.visibility is None:
        raise PreconditionError("scene has no visibility grid; run `rtr bake` first")
    lut_t = (lut or build_brdf_lut()).tensor()
    if env_mips is None:
        env_mips = mip_chain_t(model.env_map)
    if irradiance_tex is None:
        irradiance_tex = irradiance_texture_t(model.env_map)
    if gbuffer is None:
        s = model.splat
        gbuffer = raster.rasterize_tensors(s, camera, {"normal": "normal", "depth": "depth", **{k: s[k] for k in PBR_CHANNELS}})
    return shade_gbuffer(gbuffer, env_mips, irradiance_tex, model.visibility, lut_t, spec_occlusion, background,
                         min_alpha, vis_offset)


def pbr_shade(gbuffer: raster.GBuffer, scene, brdf_lut: BrdfLut | None = None, spec_occlusion: bool = True,
              background=0.0, vis_offset: float = VIS_OFFSET) -> torch.Tensor:
    """Shade a G-buffer with the scene's environment map and baked visibility."""
    if scene.visibility is None:
        raise PreconditionError("scene has no visibility grid; run `rtr bake` first")
    from .ibl import prefilter_cubemap

    env = scene.env_map if scene.env_map.mips is not None else prefilter_cubemap(scene.env_map)
    mips = [torch.as_tensor(np.asarray(m, dtype=np.float64)) for m in env.mips]
    irr = torch.as_tensor(build_irradiance(cubemap_to_sh(scene.env_map)).texture)
    lut = (brdf_lut or build_brdf_lut()).tensor()
    return shade_gbuffer(gbuffer, mips, irr, scene.visibility, lut, spec_occlusion, background, vis_offset=vis_offset).image
