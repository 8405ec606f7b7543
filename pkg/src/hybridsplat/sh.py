"""Real spherical harmonics: basis evaluation, projection and cubemap conversion.

Convention: orthonormal real SH without the Condon-Shortley phase, flat index
``j = l*l + l + m``.  Band ``l`` therefore occupies ``j in [l*l, (l+1)**2)``.
Works on numpy arrays and, through :func:`sh_basis`, on torch tensors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

MAX_BANDS = 4
UNIT_TOL = 1e-6

# Normalization constants for bands 0..3.
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, 0.31539156525252005, 0.5462742152960396)
_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658, 0.3731763325901154, 1.445305721320277)

# Clamped-cosine convolution factors per band (pi, 2pi/3, pi/4, 0).
COSINE_LOBE = (math.pi, 2.0 * math.pi / 3.0, math.pi / 4.0, 0.0)


def _stack(items, like):
    if isinstance(like, np.ndarray):
        return np.stack(items, axis=-1)
    import torch

    return torch.stack(items, dim=-1)


def sh_basis(dirs, bands: int = 3):
    """Evaluate the basis at ``dirs[..., 3]`` without validation (numpy or torch)."""
    if not 1 <= bands <= MAX_BANDS:
        raise InputError(f"bands must be in [1, {MAX_BANDS}], got {bands}")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [x * 0 + _C0]
    if bands > 1:
        out += [_C1 * y, _C1 * z, _C1 * x]
    if bands > 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            _C2[0] * x * y,
            _C2[0] * y * z,
            _C2[1] * (3.0 * zz - 1.0),
            _C2[0] * x * z,
            _C2[2] * (xx - yy),
        ]
    if bands > 3:
        out += [
            _C3[0] * y * (3.0 * xx - yy),
            _C3[1] * x * y * z,
            _C3[2] * y * (5.0 * zz - 1.0),
            _C3[3] * z * (5.0 * zz - 3.0),
            _C3[2] * x * (5.0 * zz - 1.0),
            _C3[4] * z * (xx - yy),
            _C3[0] * x * (xx - 3.0 * yy),
        ]
    return _stack(out, x)


def _check_unit(dirs: np.ndarray) -> None:
    norms = np.linalg.norm(dirs, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_TOL):
        raise InputError("direction is not unit length")


def sh_eval_basis(dir, bands: int = 3) -> np.ndarray:
    """Real SH values ``Y_j(dir)`` for ``j < bands**2``.

    ``dir`` may be a single direction ``(3,)`` or a batch ``(N, 3)``.
    """
    d = np.asarray(dir, dtype=np.float64)
    if d.shape[-1] != 3:
        raise InputError("direction must have 3 components")
    _check_unit(d)
    return sh_basis(d, bands)


@dataclass
class ShVector:
    """SH coefficients, shape ``(bands**2, channels)``."""

    coeffs: np.ndarray
    bands: int = 3

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim == 1:
            c = c[:, None]
        if self.bands < 1 or c.shape[0] != self.bands**2:
            raise InputError(f"expected {self.bands ** 2} coefficients, got {c.shape[0]}")
        self.coeffs = c

    @property
    def channels(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def zeros(cls, bands: int = 3, channels: int = 1) -> "ShVector":
        return cls(np.zeros((bands * bands, channels)), bands)

    def band_energy(self) -> np.ndarray:
        """Per-band sum of squared coefficients, shape ``(bands, channels)``."""
        return np.stack([(self.coeffs[l * l:(l + 1) ** 2] ** 2).sum(0) for l in range(self.bands)])

    def evaluate(self, dirs) -> np.ndarray:
        """Reconstruct the band-limited signal at ``dirs``; returns ``(..., channels)``."""
        return sh_basis(np.asarray(dirs, dtype=np.float64), self.bands) @ self.coeffs


@dataclass
class ShTransferMatrix:
    """Square SH-to-SH operator ``entries[j, k]`` (light index j, outgoing index k)."""

    entries: np.ndarray
    bands: int = 3

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        n = self.bands * self.bands
        if e.shape != (n, n):
            raise InputError(f"transfer matrix must be {n}x{n}, got {e.shape}")
        self.entries = e


def uniform_sphere(n: int, seed: int = 0) -> np.ndarray:
    """``n`` uniformly distributed unit vectors from a seeded generator."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def sh_project(dirs, values, bands: int = 3, weights=None) -> ShVector:
    """Monte Carlo projection of samples ``f(dirs)`` onto the SH basis.

    Uniform sphere samples use the estimator ``4pi/N * sum f Y_j``; when
    ``weights`` (per-sample solid angle) are given they replace ``4pi/N``.
    """
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if d.shape[0] == 0:
        raise InputError("empty sample set")
    v = np.asarray(values, dtype=np.float64).reshape(d.shape[0], -1)
    basis = sh_basis(d, bands)
    if weights is None:
        w = np.full(d.shape[0], 4.0 * np.pi / d.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
    return ShVector(basis.T @ (v * w[:, None]), bands)


def sh_dot(a: ShVector, b: ShVector) -> np.ndarray:
    """Per-channel inner product; a single-channel operand broadcasts."""
    if a.bands != b.bands:
        raise InputError(f"band mismatch: {a.bands} vs {b.bands}")
    return (a.coeffs * b.coeffs).sum(axis=0)


def clamped_cosine_sh(normal, bands: int = 3):
    """SH of ``max(0, n . w)`` as a function of ``w``; numpy or torch ``normal[..., 3]``.

    Zonal coefficients rotated to ``normal``: ``k_l * sqrt(4pi/(2l+1)) * Y_lm(n)``
    equals ``A_l * Y_lm(n)`` with ``A_l`` the convolution factors.
    """
    y = sh_basis(normal, bands)
    scale = np.concatenate([np.full(2 * l + 1, COSINE_LOBE[l]) for l in range(bands)])
    if isinstance(y, np.ndarray):
        return y * scale
    import torch

    return y * torch.as_tensor(scale, dtype=y.dtype)


def cosine_lobe_scale(bands: int = 3) -> np.ndarray:
    """Per-coefficient convolution factor, shape ``(bands**2,)``."""
    return np.concatenate([np.full(2 * l + 1, COSINE_LOBE[l]) for l in range(bands)])


def cubemap_to_sh(cubemap, bands: int = 3) -> ShVector:
    """Project a cubemap onto SH using exact per-texel solid angles."""
    from .cubemap import Cubemap

    if not isinstance(cubemap, Cubemap):
        raise InputError("cubemap_to_sh expects a Cubemap")
    if cubemap.face_res < 1:
        raise InputError("zero-resolution cubemap")
    dirs, omega = cubemap.texel_directions(), cubemap.texel_solid_angles()
    vals = cubemap.faces.reshape(-1, cubemap.channels)
    basis = sh_basis(dirs.reshape(-1, 3), bands)
    return ShVector(basis.T @ (vals * omega.reshape(-1, 1)), bands)
