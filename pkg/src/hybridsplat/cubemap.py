"""Cubemap container, face geometry and seamless bilinear lookup.

Faces are ordered ``+x, -x, +y, -y, +z, -z``.  A texel ``(i, j)`` on a face of
resolution ``R`` has face coordinates ``u = 2 (j + .5) / R - 1`` and
``v = 2 (i + .5) / R - 1`` with the OpenGL major-axis layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InputError

FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")


def face_uv_to_dir(face: int, u, v) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    one = np.ones_like(u)
    if face == 0:
        d = (one, -v, -u)
    elif face == 1:
        d = (-one, -v, u)
    elif face == 2:
        d = (u, one, v)
    elif face == 3:
        d = (u, -one, -v)
    elif face == 4:
        d = (u, -v, one)
    else:
        d = (-u, -v, -one)
    d = np.stack(d, axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def dir_to_face_uv(dirs):
    """Major-axis projection; returns ``(face, u, v)`` with ``u, v`` in [-1, 1]."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    xmaj = (ax >= ay) & (ax >= az)
    ymaj = ~xmaj & (ay >= az)
    zmaj = ~xmaj & ~ymaj
    face = np.where(xmaj, np.where(x > 0, 0, 1), np.where(ymaj, np.where(y > 0, 2, 3), np.where(z > 0, 4, 5)))
    ma = np.where(xmaj, ax, np.where(ymaj, ay, az))
    sc = np.select(
        [face == 0, face == 1, face == 2, face == 3, face == 4],
        [-z, z, x, x, x],
        -x,
    )
    tc = np.select([face == 2, face == 3], [z, -z], -y)
    ma = np.maximum(ma, 1e-30)
    return face.astype(np.int64), sc / ma, tc / ma


@lru_cache(maxsize=16)
def texel_directions(res: int) -> np.ndarray:
    """Unit directions at texel centers, shape ``(6, res, res, 3)``."""
    c = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    v, u = np.meshgrid(c, c, indexing="ij")
    out = np.stack([face_uv_to_dir(f, u, v) for f in range(6)])
    out.setflags(write=False)
    return out


def _area(x, y):
    return np.arctan2(x * y, np.sqrt(x * x + y * y + 1.0))


@lru_cache(maxsize=16)
def texel_solid_angles(res: int) -> np.ndarray:
    """Exact solid angle of each texel, shape ``(6, res, res)``; sums to 4pi."""
    e = np.linspace(-1.0, 1.0, res + 1)
    y0, x0 = np.meshgrid(e[:-1], e[:-1], indexing="ij")
    y1, x1 = np.meshgrid(e[1:], e[1:], indexing="ij")
    w = _area(x0, y0) - _area(x0, y1) - _area(x1, y0) + _area(x1, y1)
    out = np.broadcast_to(w, (6, res, res)).copy()
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def padded_index(res: int) -> np.ndarray:
    """Flat texel index for a 1-texel border around every face.

    Entry ``[f, i, j]`` of the ``(6, res+2, res+2)`` result is the index into
    ``faces.reshape(-1)`` (per channel) of the texel nearest to the padded
    texel's direction, so bilinear taps never need to clamp at face edges.
    """
    c = (np.arange(-1, res + 1) + 0.5) / res * 2.0 - 1.0
    v, u = np.meshgrid(c, c, indexing="ij")
    out = np.empty((6, res + 2, res + 2), dtype=np.int64)
    for f in range(6):
        d = face_uv_to_dir(f, u, v)
        ff, uu, vv = dir_to_face_uv(d)
        j = np.clip(np.floor((uu + 1.0) * 0.5 * res), 0, res - 1).astype(np.int64)
        i = np.clip(np.floor((vv + 1.0) * 0.5 * res), 0, res - 1).astype(np.int64)
        out[f] = (ff * res + i) * res + j
    out.setflags(write=False)
    return out


def bilinear_taps(dirs, res: int):
    """Four flat texel indices and weights for seamless bilinear lookup.

    Returns ``(idx, w)`` each of shape ``(..., 4)``.
    """
    face, u, v = dir_to_face_uv(dirs)
    pad = padded_index(res)
    s = (u + 1.0) * 0.5 * res - 0.5 + 1.0
    t = (v + 1.0) * 0.5 * res - 0.5 + 1.0
    j0 = np.clip(np.floor(s), 0, res).astype(np.int64)
    i0 = np.clip(np.floor(t), 0, res).astype(np.int64)
    fs = np.clip(s - j0, 0.0, 1.0)
    ft = np.clip(t - i0, 0.0, 1.0)
    idx = np.stack(
        [pad[face, i0, j0], pad[face, i0, j0 + 1], pad[face, i0 + 1, j0], pad[face, i0 + 1, j0 + 1]],
        axis=-1,
    )
    w = np.stack([(1 - fs) * (1 - ft), fs * (1 - ft), (1 - fs) * ft, fs * ft], axis=-1)
    return idx, w


def box_downsample(faces: np.ndarray) -> np.ndarray:
    f, r, _, c = faces.shape
    return faces.reshape(f, r // 2, 2, r // 2, 2, c).mean(axis=(2, 4))


@dataclass
class Cubemap:
    """Six square faces, shape ``(6, R, R, C)``; values finite and non-negative.

    ``mips`` optionally holds the roughness-prefiltered chain (level 0 first).
    Face data is kept in float32, the precision of the on-disk format.
    """

    faces: np.ndarray
    mips: list | None = field(default=None, repr=False)
    signed: bool = False  # test signals (e.g. a single SH basis) may be negative

    def __post_init__(self):
        f = np.asarray(self.faces, dtype=np.float32)
        if f.ndim == 3:
            f = f[..., None]
        if f.ndim != 4 or f.shape[0] != 6 or f.shape[1] != f.shape[2]:
            raise InputError(f"cubemap faces must be (6, R, R, C), got {f.shape}")
        if f.shape[1] < 1:
            raise InputError("zero-resolution cubemap")
        if not np.all(np.isfinite(f)) or (not self.signed and np.any(f < 0)):
            raise InputError("cubemap values must be finite and non-negative")
        self.faces = f

    @property
    def face_res(self) -> int:
        return self.faces.shape[1]

    @property
    def channels(self) -> int:
        return self.faces.shape[3]

    @classmethod
    def constant(cls, value, res: int = 128, channels: int = 3) -> "Cubemap":
        v = np.broadcast_to(np.asarray(value, dtype=np.float32), (channels,))
        return cls(np.broadcast_to(v, (6, res, res, channels)).copy())

    @classmethod
    def from_function(cls, fn, res: int = 128, signed: bool = False) -> "Cubemap":
        """Sample ``fn(dirs[N, 3]) -> values[N, C]`` at texel centers."""
        d = texel_directions(res).reshape(-1, 3)
        vals = np.asarray(fn(d), dtype=np.float64).reshape(d.shape[0], -1)
        return cls(vals.reshape(6, res, res, -1), signed=signed)

    @classmethod
    def from_equirect(cls, image, res: int = 128) -> "Cubemap":
        """Resample an equirectangular ``(H, W, C)`` map (+z up, bilinear, wrap in longitude)."""
        img = np.asarray(image, dtype=np.float64)
        h, w = img.shape[:2]

        def fn(d):
            theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
            phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * np.pi)
            y = theta / np.pi * h - 0.5
            x = phi / (2.0 * np.pi) * w - 0.5
            y0 = np.clip(np.floor(y), 0, h - 1).astype(int)
            y1 = np.clip(y0 + 1, 0, h - 1)
            fy = np.clip(y - y0, 0.0, 1.0)[:, None]
            x0 = np.floor(x).astype(int)
            fx = (x - x0)[:, None]
            x0, x1 = x0 % w, (x0 + 1) % w
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            return top * (1 - fy) + bot * fy

        return cls.from_function(fn, res)

    def texel_directions(self) -> np.ndarray:
        return texel_directions(self.face_res)

    def texel_solid_angles(self) -> np.ndarray:
        return texel_solid_angles(self.face_res)

    def sample(self, dirs, level: int = 0) -> np.ndarray:
        """Seamless bilinear lookup of base (or mip ``level``) at unit ``dirs``."""
        data = self.faces if level == 0 else self.mips[level]
        res = data.shape[1]
        d = np.asarray(dirs, dtype=np.float64)
        idx, w = bilinear_taps(d, res)
        flat = data.reshape(-1, data.shape[-1]).astype(np.float64)
        return (flat[idx] * w[..., None]).sum(axis=-2)

    def copy(self) -> "Cubemap":
        mips = None if self.mips is None else [m.copy() for m in self.mips]
        return Cubemap(self.faces.copy(), mips, self.signed)
