"""Portable float map (PFM) and 8-bit pixmap (PPM) readers/writers.

PFM rows are stored bottom-to-top, little-endian (negative scale).  Arrays in
memory are top-to-bottom ``(H, W)`` or ``(H, W, 3)``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import SceneParseError

GAMMA = 2.2


def write_pfm(path, image) -> None:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM supports 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise SceneParseError("not a PFM file", path=path, line=1)
        try:
            w, h = (int(t) for t in f.readline().split())
            scale = float(f.readline().strip())
        except ValueError as exc:
            raise SceneParseError(f"bad PFM header: {exc}", path=path, line=2) from None
        ch = 3 if tag == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * ch:
        raise SceneParseError(f"expected {w * h * ch} floats, found {data.size}", path=path)
    img = data.reshape(h, w, ch)[::-1].astype(np.float32)
    return img[..., 0] if ch == 1 else img


def to_srgb8(image) -> np.ndarray:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * img ** (1.0 / GAMMA)).astype(np.uint8)


def write_ppm(path, image) -> None:
    """8-bit preview with fixed gamma 2.2."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img8 = to_srgb8(img[..., :3])
    h, w = img8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img8.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 pixmap back to linear floats in [0, 1]."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise SceneParseError("not a binary PPM", path=path)
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    img = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return (img.astype(np.float64) / maxval) ** GAMMA
