"""Image, geometry and regularization losses (all differentiable torch functions)."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .errors import InputError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2
MASK_EPS = 1e-5


@dataclass
class LossWeights:
    dssim: float = 0.2
    pbr: float = 1.0  # applied in stage 2; stage 1 always uses 0
    light: float = 0.003
    metal: float = 0.1
    normal: float = 0.02
    smooth: float = 0.01  # per smoothed buffer
    mask: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise InputError(f"loss weight {f.name} must be non-negative")


def _gauss_window(size: int, sigma: float, channels: int, dtype) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - size // 2
    g = torch.exp(-(x * x) / (2.0 * sigma * sigma))
    g = g / g.sum()
    w = g[:, None] * g[None, :]
    return w.expand(channels, 1, size, size).contiguous()


def ssim(a: torch.Tensor, b: torch.Tensor, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Mean SSIM of two ``(H, W, C)`` images with a Gaussian window and zero padding."""
    if a.shape != b.shape:
        raise InputError(f"image size mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 2:
        a, b = a[..., None], b[..., None]
    c = a.shape[-1]
    x = a.permute(2, 0, 1)[None]
    y = b.permute(2, 0, 1)[None]
    w = _gauss_window(size, sigma, c, a.dtype)
    conv = lambda t: F.conv2d(t, w, padding=size // 2, groups=c)
    mx, my = conv(x), conv(y)
    sxx = conv(x * x) - mx * mx
    syy = conv(y * y) - my * my
    sxy = conv(x * y) - mx * my
    s = ((2 * mx * my + _C1) * (2 * sxy + _C2)) / ((mx * mx + my * my + _C1) * (sxx + syy + _C2))
    return s.mean()


def loss_render(pred: torch.Tensor, gt: torch.Tensor, lam: float = 0.2) -> torch.Tensor:
    """``(1 - lam) L1 + lam (1 - SSIM) / 2``."""
    if pred.shape != gt.shape:
        raise InputError(f"image size mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    l1 = (pred - gt).abs().mean()
    return (1.0 - lam) * l1 + lam * (1.0 - ssim(pred, gt)) / 2.0


def loss_normal(n: torch.Tensor, n_hat: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean Euclidean distance between normal buffers over ``valid`` pixels."""
    if not bool(valid.any()):
        return n.sum() * 0.0
    d = n[valid] - n_hat[valid]
    return torch.sqrt((d * d).sum(-1) + 1e-20).mean()


def loss_light(env: torch.Tensor) -> torch.Tensor:
    """Mean over texels of ``sum_c |L_c - mean_c L|`` (penalizes colored light)."""
    flat = env.reshape(-1, env.shape[-1])
    return (flat - flat.mean(-1, keepdim=True)).abs().sum(-1).mean()


def loss_metal(metallic: torch.Tensor, intensity: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean ``|m - R_i|`` over foreground pixels."""
    d = (metallic - intensity).abs()
    if mask is None:
        return d.mean()
    if not bool(mask.any()):
        return d.sum() * 0.0
    return d[mask].mean()


def loss_smooth(f: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Edge-aware smoothness: forward-difference ``|grad f|`` damped by ``exp(-|grad C_gt|)``.

    Gradient magnitudes are channel-mean absolute differences; the x and y
    terms are averaged over their own pixel sets and summed.
    """
    if f.dim() == 2:
        f = f[..., None]
    fx = (f[:, 1:] - f[:, :-1]).abs().mean(-1)
    fy = (f[1:] - f[:-1]).abs().mean(-1)
    gx = (gt[:, 1:] - gt[:, :-1]).abs().mean(-1)
    gy = (gt[1:] - gt[:-1]).abs().mean(-1)
    return (fx * torch.exp(-gx)).mean() + (fy * torch.exp(-gy)).mean()


def loss_mask(alpha: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy between coverage and object mask."""
    o = torch.clamp(alpha, MASK_EPS, 1.0 - MASK_EPS)
    m = mask.to(o.dtype)
    return (-m * torch.log(o) - (1.0 - m) * torch.log(1.0 - o)).mean()


STAGE2_TERMS = ("pbr", "light", "metal")


def total_loss(terms: dict, weights: LossWeights, stage: int) -> torch.Tensor:
    """Weighted sum of loss components.

    ``terms`` may hold ``hybrid``, ``pbr``, ``light``, ``metal``, ``normal``,
    ``mask`` and ``smooth`` (already summed over buffers); missing terms count
    as zero.  Stage 1 drops the PBR-dependent terms.
    """
    lam_pbr = 0.0 if stage == 1 else weights.pbr
    scale = {
        "hybrid": 1.0,
        "pbr": lam_pbr,
        "light": weights.light if stage == 2 else 0.0,
        "metal": weights.metal if stage == 2 else 0.0,
        "normal": weights.normal,
        "smooth": weights.smooth,
        "mask": weights.mask,
    }
    out = 0.0
    for name, w in scale.items():
        if name in terms and w != 0.0:
            out = out + w * terms[name]
    if not isinstance(out, torch.Tensor):
        out = torch.zeros((), dtype=torch.float64)
    return out


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; identical images report 99."""
    mse = float(((torch.as_tensor(a) - torch.as_tensor(b)) ** 2).mean())
    return 99.0 if mse <= 0 else min(99.0, 10.0 * math.log10(1.0 / mse))


def normal_mae(a, b, valid=None) -> float:
    """Mean angle in degrees between unit normal buffers."""
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    cos = torch.clamp((a * b).sum(-1), -1.0, 1.0)
    ang = torch.rad2deg(torch.arccos(cos))
    if valid is not None:
        valid = torch.as_tensor(valid, dtype=torch.bool)
        if not bool(valid.any()):
            return 0.0
        ang = ang[valid]
    return float(ang.mean())
