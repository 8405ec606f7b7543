"""Projection, tile binning and differentiable alpha blending of Gaussians.

The blending kernels come from the compiled ``_raster_ext`` when it is
importable and fall back to the numpy implementation otherwise; set
``HYBRIDSPLAT_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import _raster_py
from .errors import InputError
from .scene import Camera, GaussianSplat

try:
    from . import _raster_ext
except ImportError:  # extension not built
    _raster_ext = None

TILE = 16
DILATION = 0.3
ALPHA_MAX = _raster_py.ALPHA_MAX
T_MIN = _raster_py.T_MIN


def _select_backend(name: str | None = None):
    name = name or os.environ.get("HYBRIDSPLAT_BACKEND", "auto")
    if name == "python":
        return _raster_py
    if name in ("compiled", "cython"):
        if _raster_ext is None:
            raise ImportError("compiled raster kernels are not built")
        return _raster_ext
    return _raster_ext if _raster_ext is not None else _raster_py


_kernels = _select_backend()


def backend_name() -> str:
    return "compiled" if _kernels is _raster_ext else "python"


def set_backend(name: str) -> None:
    """Switch kernels at runtime: ``"compiled"``, ``"python"`` or ``"auto"``."""
    global _kernels
    _kernels = _select_backend(name)


# ---------------------------------------------------------------- geometry


def quat_to_rotmat_t(q: torch.Tensor) -> torch.Tensor:
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(q.shape[:-1] + (3, 3))


def covariance_t(rotation: torch.Tensor, log_scale: torch.Tensor) -> torch.Tensor:
    r = quat_to_rotmat_t(rotation)
    s2 = torch.exp(2.0 * log_scale)
    return (r * s2[:, None, :]) @ r.transpose(1, 2)


def splat_normals_t(rotation, log_scale, position, eye) -> torch.Tensor:
    """Shortest axis of each Gaussian, flipped to face ``eye``.

    Ties between equal smallest scales resolve to the lowest axis index.
    """
    r = quat_to_rotmat_t(rotation)
    axis = torch.argmin(log_scale.detach(), dim=1)
    n = torch.gather(r, 2, axis[:, None, None].expand(-1, 3, 1))[:, :, 0]
    to_eye = torch.as_tensor(eye, dtype=position.dtype) - position
    sign = torch.where((n * to_eye).sum(-1, keepdim=True) >= 0, 1.0, -1.0).to(n.dtype)
    return n * sign


def compute_normal(splat: GaussianSplat, view_dir) -> np.ndarray:
    """Unit shortest axis of the splat's covariance, oriented against ``view_dir``.

    ``view_dir`` points from the viewer towards the splat.
    """
    r = splat.rotation_matrix()
    axis = int(np.argmin(np.asarray(splat.log_scale)))
    n = r[:, axis].copy()
    if np.dot(n, -np.asarray(view_dir, dtype=np.float64)) < 0:
        n = -n
    return n


@dataclass
class ScreenSplat:
    mean2d: np.ndarray
    conic: np.ndarray  # (a, b, c) of [[a, b], [b, c]]
    depth: float
    index: int
    cov2d: np.ndarray

    @property
    def conic_matrix(self) -> np.ndarray:
        a, b, c = self.conic
        return np.array([[a, b], [b, c]])


def project_t(position, cov3d, camera: Camera):
    """EWA projection. Returns mean2d (N,2), cov2d (N,3), depth (N,), valid (N,) bool."""
    dt = position.dtype
    R = torch.as_tensor(camera.R, dtype=dt)
    t = torch.as_tensor(camera.t, dtype=dt)
    pc = position @ R.T + t
    tz = pc[:, 2]
    valid = tz > camera.near
    tzs = torch.where(valid, tz, torch.ones_like(tz))
    x, y = pc[:, 0] / tzs, pc[:, 1] / tzs
    mean2d = torch.stack([camera.fx * x + camera.cx, camera.fy * y + camera.cy], dim=-1)
    # clamp the Jacobian's lateral term for splats far outside the frustum
    lim_x = 1.3 * (0.5 * camera.width / camera.fx)
    lim_y = 1.3 * (0.5 * camera.height / camera.fy)
    xc = torch.clamp(x, -lim_x - camera.cx / camera.fx, lim_x + (camera.width - camera.cx) / camera.fx)
    yc = torch.clamp(y, -lim_y - camera.cy / camera.fy, lim_y + (camera.height - camera.cy) / camera.fy)
    zero = torch.zeros_like(tzs)
    J = torch.stack(
        [
            torch.stack([camera.fx / tzs, zero, -camera.fx * xc / tzs], -1),
            torch.stack([zero, camera.fy / tzs, -camera.fy * yc / tzs], -1),
        ],
        dim=1,
    )
    M = J @ R
    cov = M @ cov3d @ M.transpose(1, 2)
    cov2d = torch.stack([cov[:, 0, 0] + DILATION, cov[:, 0, 1], cov[:, 1, 1] + DILATION], dim=-1)
    return mean2d, cov2d, tz, valid


def conic_from_cov_t(cov2d):
    a, b, c = cov2d.unbind(-1)
    det = a * c - b * b
    return torch.stack([c / det, -b / det, a / det], dim=-1)


def project_splat(splat: GaussianSplat, camera: Camera, index: int = 0) -> ScreenSplat | None:
    """Screen-space footprint of one splat; ``None`` if behind the near plane."""
    pos = torch.as_tensor(np.asarray(splat.position, dtype=np.float64)[None])
    cov = torch.as_tensor(splat.covariance()[None])
    mean2d, cov2d, depth, valid = project_t(pos, cov, camera)
    if not bool(valid[0]):
        return None
    conic = conic_from_cov_t(cov2d)
    a, b, c = cov2d[0].tolist()
    return ScreenSplat(mean2d[0].numpy().copy(), conic[0].numpy().copy(), float(depth[0]), index, np.array([[a, b], [b, c]]))


# ---------------------------------------------------------------- binning


@dataclass
class Binning:
    ranges: np.ndarray  # (tiles, 2) int64
    ids: np.ndarray  # (M,) int64, indices into the visible subset
    width: int
    height: int
    tile: int


def bin_splats(mean2d: np.ndarray, cov2d: np.ndarray, depth: np.ndarray, width: int, height: int, tile: int = TILE) -> Binning:
    """Assign splats to every tile their 3-sigma box touches; sort by (tile, depth, index)."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n = mean2d.shape[0]
    if n == 0:
        return Binning(np.zeros((tiles_x * tiles_y, 2), np.int64), np.zeros(0, np.int64), width, height, tile)
    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(0.1, mid * mid - (a * c - b * b)))
    rad = np.ceil(3.0 * np.sqrt(lam))
    x0 = np.clip(np.floor((mean2d[:, 0] - rad) / tile), 0, tiles_x).astype(np.int64)
    x1 = np.clip(np.floor((mean2d[:, 0] + rad) / tile) + 1, 0, tiles_x).astype(np.int64)
    y0 = np.clip(np.floor((mean2d[:, 1] - rad) / tile), 0, tiles_y).astype(np.int64)
    y1 = np.clip(np.floor((mean2d[:, 1] + rad) / tile) + 1, 0, tiles_y).astype(np.int64)
    nx, ny = np.maximum(x1 - x0, 0), np.maximum(y1 - y0, 0)
    counts = nx * ny
    total = int(counts.sum())
    sid = np.repeat(np.arange(n), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nxr = np.repeat(nx, counts)
    tile_id = (np.repeat(y0, counts) + local // np.maximum(nxr, 1)) * tiles_x + np.repeat(x0, counts) + local % np.maximum(nxr, 1)
    order = np.lexsort((sid, depth[sid], tile_id))
    tile_sorted = tile_id[order]
    ids = sid[order]
    bounds = np.arange(tiles_x * tiles_y + 1)
    edges = np.searchsorted(tile_sorted, bounds)
    ranges = np.stack([edges[:-1], edges[1:]], axis=1).astype(np.int64)
    return Binning(ranges, ids.astype(np.int64), width, height, tile)


# ---------------------------------------------------------------- blending


class _Blend(torch.autograd.Function):
    @staticmethod
    def forward(ctx, mean2d, conic, opacity, payload, binning: Binning):
        args = (
            binning.ranges, binning.ids,
            np.ascontiguousarray(mean2d.detach().numpy(), dtype=np.float64),
            np.ascontiguousarray(conic.detach().numpy(), dtype=np.float64),
            np.ascontiguousarray(opacity.detach().numpy(), dtype=np.float64),
            np.ascontiguousarray(payload.detach().numpy(), dtype=np.float64),
            binning.width, binning.height, binning.tile,
        )
        out, tfin, last = _kernels.forward(*args)
        ctx.args = args
        ctx.tfin, ctx.last = tfin, last
        ctx.dtype = payload.dtype
        alpha = torch.from_numpy(1.0 - tfin).to(payload.dtype)
        return torch.from_numpy(out).to(payload.dtype), alpha

    @staticmethod
    def backward(ctx, grad_out, grad_alpha):
        go = np.ascontiguousarray(grad_out.numpy(), dtype=np.float64) if grad_out is not None else np.zeros(ctx.args[5].shape[1:2])
        ga = np.ascontiguousarray(grad_alpha.numpy(), dtype=np.float64) if grad_alpha is not None else np.zeros_like(ctx.tfin)
        gm, gc, go_, gp = _kernels.backward(*ctx.args, go, ga, ctx.tfin, ctx.last)
        d = ctx.dtype
        return (torch.from_numpy(gm).to(d), torch.from_numpy(gc).to(d), torch.from_numpy(go_).to(d), torch.from_numpy(gp).to(d), None)


def blend(mean2d, conic, opacity, payload, binning: Binning):
    """Front-to-back blend of ``payload (N, C)``; returns ``(image (H,W,C), alpha (H,W))``.

    ``I = sum_i f_i a_i T_i`` and ``alpha = sum_i a_i T_i``.  Differentiable
    w.r.t. all four tensor inputs.
    """
    if payload.shape[0] == 0:
        h, w = binning.height, binning.width
        z = payload.sum() * 0.0
        return torch.zeros((h, w, payload.shape[1]), dtype=payload.dtype) + z, torch.zeros((h, w), dtype=payload.dtype) + z
    return _Blend.apply(mean2d, conic, opacity, payload, binning)


# ---------------------------------------------------------------- g-buffer


@dataclass
class GBuffer:
    """Per-pixel blended channels (premultiplied by coverage) and accumulated alpha."""

    channels: dict
    alpha: torch.Tensor
    camera: Camera

    def __getitem__(self, key):
        return self.channels[key]

    def normalized(self, key, eps: float = 1e-8):
        """Channel divided by coverage (alpha-weighted mean)."""
        return self.channels[key] / torch.clamp(self.alpha, min=eps)[..., None]

    def normal(self):
        n = self.channels["normal"]
        return n / torch.clamp(n.norm(dim=-1, keepdim=True), min=1e-12)

    def depth(self):
        return self.normalized("depth")[..., 0]

    def positions(self):
        """World-space points back-projected from the blended depth, ``(H, W, 3)``."""
        return backproject(self.depth(), self.camera)


def backproject(depth: torch.Tensor, camera: Camera) -> torch.Tensor:
    h, w = depth.shape
    dt = depth.dtype
    ys = torch.arange(h, dtype=dt) + 0.5
    xs = torch.arange(w, dtype=dt) + 0.5
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    pc = torch.stack([(xx - camera.cx) / camera.fx * depth, (yy - camera.cy) / camera.fy * depth, depth], dim=-1)
    R = torch.as_tensor(camera.R, dtype=dt)
    t = torch.as_tensor(camera.t, dtype=dt)
    return (pc - t) @ R


def prepare(position, rotation, log_scale, opacity_logit, camera: Camera):
    """Project all splats and bin the visible ones.

    Returns ``(index, mean2d, conic, opacity, depth, binning)`` restricted to
    splats in front of the near plane.
    """
    cov3d = covariance_t(rotation, log_scale)
    mean2d, cov2d, depth, valid = project_t(position, cov3d, camera)
    idx = torch.nonzero(valid, as_tuple=False)[:, 0]
    mean2d, cov2d, depth = mean2d[idx], cov2d[idx], depth[idx]
    conic = conic_from_cov_t(cov2d)
    opacity = torch.sigmoid(opacity_logit[idx])
    binning = bin_splats(mean2d.detach().numpy(), cov2d.detach().numpy(), depth.detach().numpy(), camera.width, camera.height)
    return idx, mean2d, conic, opacity, depth, binning


def rasterize_tensors(tensors: dict, camera: Camera, channels: dict):
    """Blend named per-splat payloads (``(N, C)`` tensors) into a :class:`GBuffer`.

    ``channels`` maps names to payload tensors or to the special strings
    ``"normal"`` and ``"depth"``.
    """
    idx, mean2d, conic, opacity, depth, binning = prepare(
        tensors["position"], tensors["rotation"], tensors["log_scale"], tensors["opacity_logit"], camera
    )
    names, cols, widths = [], [], []
    for name, src in channels.items():
        if isinstance(src, str):
            if src == "normal":
                val = splat_normals_t(tensors["rotation"], tensors["log_scale"], tensors["position"], camera.center)[idx]
            elif src == "depth":
                val = depth[:, None]
            else:
                raise InputError(f"unknown builtin channel {src!r}")
        else:
            val = src[idx]
            if val.dim() == 1:
                val = val[:, None]
        names.append(name)
        cols.append(val)
        widths.append(val.shape[1])
    dt = tensors["position"].dtype
    payload = torch.cat(cols, dim=1) if cols else torch.zeros((idx.shape[0], 0), dtype=dt)
    image, alpha = blend(mean2d, conic, opacity, payload, binning)
    out, col = {}, 0
    for name, w in zip(names, widths):
        out[name] = image[..., col:col + w]
        col += w
    return GBuffer(out, alpha, camera)


def rasterize(scene, camera: Camera, channels=("normal", "depth"), model=None) -> GBuffer:
    """Blend splat attributes of ``scene`` into a G-buffer.

    ``channels`` lists splat field names (e.g. ``"albedo"``) plus the
    builtins ``"normal"`` and ``"depth"``.
    """
    from .model import SceneTensors

    model = model or SceneTensors.from_scene(scene)
    spec = {}
    for ch in channels:
        spec[ch] = ch if ch in ("normal", "depth") else model.field(ch)
    return rasterize_tensors(model.tensors(), camera, spec)


def depth_to_pseudo_normals(depth: torch.Tensor, camera: Camera, alpha: torch.Tensor | None = None, min_alpha: float = 0.5):
    """Normals from central differences of back-projected depth (world frame).

    Returns ``(normals (H,W,3), valid (H,W) bool)``; border pixels and pixels
    with ``alpha < min_alpha`` (or an invalid neighbour) are invalid.
    """
    p = backproject(depth, camera)
    h, w = depth.shape
    n = torch.zeros_like(p)
    valid = torch.zeros((h, w), dtype=torch.bool)
    if h < 3 or w < 3:
        return n, valid
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    c = torch.cross(dx, dy, dim=-1)
    c = c / torch.clamp(c.norm(dim=-1, keepdim=True), min=1e-12)
    to_cam = torch.as_tensor(camera.center, dtype=depth.dtype) - p[1:-1, 1:-1]
    c = torch.where((c * to_cam).sum(-1, keepdim=True) < 0, -c, c)
    n = torch.nn.functional.pad(c.permute(2, 0, 1), (1, 1, 1, 1)).permute(1, 2, 0)
    valid[1:-1, 1:-1] = True
    if alpha is not None:
        ok = alpha.detach() >= min_alpha
        nb = ok.clone()
        nb[1:-1, 1:-1] = ok[1:-1, 1:-1] & ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1]
        valid &= nb
    return n, valid
