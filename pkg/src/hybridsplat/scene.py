"""Gaussian scene representation, cameras and the text scene format.

A scene is stored as a directory::

    scene.txt                 header, lighting, decoder weights, one line per splat
    reflection_map/+x.pfm ... six faces of the learnable reflection map
    env_map/+x.pfm ...        six faces of the PBR environment map
    visibility.visgrid        optional baked visibility grid

Grammar of ``scene.txt`` (whitespace separated, ``#`` starts a comment)::

    rtrscene 1
    splats <N>
    sh_light <bands> <channels> <bands^2*channels floats, row-major>
    decoder <hidden> <feature_dim>
    w1 <...> / b1 <...> / w2 <...> / b2 <...> / w3 <...> / b3 <...>
    fields <name>:<width> ...
    s <values in field order>          (N lines)
    end
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from .cubemap import FACE_NAMES, Cubemap
from .errors import InputError, SceneParseError
from .imageio import read_pfm, write_pfm
from .sh import ShVector, clamped_cosine_sh

FORMAT_VERSION = 1
FEATURE_DIM = 16
HIDDEN = 64
SH_BANDS = 3
SH_COEFFS = SH_BANDS * SH_BANDS

# (name, width, lower bound, upper bound); None = unbounded.
SPLAT_FIELDS = (
    ("position", 3, None, None),
    ("log_scale", 3, None, None),
    ("rotation", 4, None, None),
    ("opacity_logit", 1, None, None),
    ("rho_d", 3, 0.0, None),
    ("c_t", SH_COEFFS, None, None),
    ("rho_s", 3, 0.0, None),
    ("f_t", FEATURE_DIM, None, None),
    ("R_t", 3, 0.0, 1.0),
    ("R_r", 1, 0.0, 1.0),
    ("R_i", 1, 0.0, 1.0),
    ("albedo", 3, 0.0, 1.0),
    ("metallic", 1, 0.0, 1.0),
    ("roughness", 1, 0.0, 1.0),
    ("L_ind", 3, 0.0, 1.0),
)
FIELD_WIDTH = {name: w for name, w, _, _ in SPLAT_FIELDS}
FIELD_BOUNDS = {name: (lo, hi) for name, _, lo, hi in SPLAT_FIELDS}


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from ``(..., 4)`` quaternions ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def quat_from_z_to(n: np.ndarray) -> np.ndarray:
    """Quaternions rotating +z onto unit vectors ``n[..., 3]``."""
    n = np.asarray(n, dtype=np.float64)
    w = 1.0 + n[..., 2]
    q = np.stack([w, -n[..., 1], n[..., 0], np.zeros_like(w)], axis=-1)
    flip = w < 1e-9  # n == -z
    q[flip] = (0.0, 1.0, 0.0, 0.0)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class GaussianSplat:
    """One anisotropic Gaussian with its hybrid-shading and PBR attributes."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    rho_d: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    c_t: np.ndarray = field(default_factory=lambda: np.zeros(SH_COEFFS))
    rho_s: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_t: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    R_t: np.ndarray = field(default_factory=lambda: np.ones(3))
    R_r: float = 0.5
    R_i: float = 0.01
    albedo: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    metallic: float = 0.5
    roughness: float = 0.5
    L_ind: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    def covariance(self) -> np.ndarray:
        r = self.rotation_matrix()
        s2 = np.exp(2.0 * np.asarray(self.log_scale, dtype=np.float64))
        return (r * s2) @ r.T


class Splats:
    """Struct-of-arrays storage for ``N`` splats; one float64 array per field."""

    def __init__(self, **arrays):
        n = None
        for name, width, _, _ in SPLAT_FIELDS:
            a = arrays.get(name)
            if a is None:
                raise InputError(f"missing splat field {name!r}")
            a = np.asarray(a, dtype=np.float64).reshape(-1, width)
            if n is None:
                n = a.shape[0]
            elif a.shape[0] != n:
                raise InputError(f"field {name!r} has {a.shape[0]} rows, expected {n}")
            setattr(self, name, a if width > 1 else a[:, 0])
        self._n = n or 0

    @classmethod
    def empty(cls) -> "Splats":
        return cls(**{name: np.zeros((0, w)) for name, w, _, _ in SPLAT_FIELDS})

    @classmethod
    def from_list(cls, splats: list[GaussianSplat]) -> "Splats":
        if not splats:
            return cls.empty()
        return cls(**{name: np.stack([np.atleast_1d(getattr(s, name)) for s in splats]) for name, _, _, _ in SPLAT_FIELDS})

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i: int) -> GaussianSplat:
        kw = {}
        for name, width, _, _ in SPLAT_FIELDS:
            v = getattr(self, name)[i]
            kw[name] = float(v) if width == 1 else v.copy()
        return GaussianSplat(**kw)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name, _, _, _ in SPLAT_FIELDS}

    def copy(self) -> "Splats":
        return Splats(**{k: v.copy() for k, v in self.as_dict().items()})

    def matrix(self) -> np.ndarray:
        """All fields concatenated per splat, shape ``(N, total_width)``."""
        cols = [getattr(self, name).reshape(len(self), w) for name, w, _, _ in SPLAT_FIELDS]
        return np.concatenate(cols, axis=1) if cols else np.zeros((0, 0))

    def covariances(self) -> np.ndarray:
        r = quat_to_rotmat(self.rotation)
        s2 = np.exp(2.0 * self.log_scale)
        return (r * s2[:, None, :]) @ np.swapaxes(r, 1, 2)

    def clamp_(self) -> None:
        for name, (lo, hi) in FIELD_BOUNDS.items():
            if lo is not None or hi is not None:
                np.clip(getattr(self, name), lo, hi, out=getattr(self, name))
        self.rotation /= np.linalg.norm(self.rotation, axis=1, keepdims=True)


@dataclass
class TransferDecoder:
    """Small MLP mapping (feature, reflection direction) to transfer coefficients.

    Layer 1 sees the direction only; the feature is concatenated before layer 2.
    """

    w1: np.ndarray  # (hidden, 3)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, hidden + feature_dim)
    b2: np.ndarray
    w3: np.ndarray  # (coeffs, hidden)
    b3: np.ndarray

    PARAMS = ("w1", "b1", "w2", "b2", "w3", "b3")

    @classmethod
    def init(cls, seed: int = 0, hidden: int = HIDDEN, feature_dim: int = FEATURE_DIM, out: int = SH_COEFFS):
        rng = np.random.default_rng(seed)

        def dense(n_out, n_in):
            bound = 1.0 / math.sqrt(n_in)
            return rng.uniform(-bound, bound, (n_out, n_in)), rng.uniform(-bound, bound, n_out)

        w1, b1 = dense(hidden, 3)
        w2, b2 = dense(hidden, hidden + feature_dim)
        w3, b3 = dense(out, hidden)
        return cls(w1, b1, w2, b2, w3, b3)

    @classmethod
    def zeros(cls, hidden: int = HIDDEN, feature_dim: int = FEATURE_DIM, out: int = SH_COEFFS):
        return cls(
            np.zeros((hidden, 3)), np.zeros(hidden),
            np.zeros((hidden, hidden + feature_dim)), np.zeros(hidden),
            np.zeros((out, hidden)), np.zeros(out),
        )

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w2.shape[1] - self.hidden

    def __call__(self, f_t, o) -> np.ndarray:
        h = np.maximum(0.0, np.asarray(o, dtype=np.float64) @ self.w1.T + self.b1)
        f = np.broadcast_to(np.asarray(f_t, dtype=np.float64), h.shape[:-1] + (self.feature_dim,))
        h = np.maximum(0.0, np.concatenate([h, f], axis=-1) @ self.w2.T + self.b2)
        return h @ self.w3.T + self.b3

    def copy(self) -> "TransferDecoder":
        return TransferDecoder(*(np.array(getattr(self, p), dtype=np.float64) for p in self.PARAMS))


@dataclass
class Camera:
    """Pinhole camera; ``R, t`` map world to camera (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.01

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-6):
            raise InputError("camera rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), fov_deg: float = 40.0, width: int = 64, height: int = 64, near: float = 0.01):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-8:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]) if abs(fwd[1]) < 0.9 else np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height, R, -R @ eye, near)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def pixel_rays(self) -> np.ndarray:
        """World-space unit ray directions through pixel centers, ``(H, W, 3)``."""
        j, i = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d = np.stack([(j - self.cx) / self.fx, (i - self.cy) / self.fy, np.ones_like(j)], axis=-1)
        d = d @ self.R
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_line(self) -> str:
        vals = [self.fx, self.fy, self.cx, self.cy, self.width, self.height, *self.R.reshape(-1), *self.t, self.near]
        return "camera " + " ".join(repr(float(v)) for v in vals)

    @classmethod
    def from_line(cls, line: str) -> "Camera":
        tok = line.split()
        if not tok or tok[0] != "camera" or len(tok) != 20:
            raise InputError("camera line must be 'camera fx fy cx cy w h R(9) t(3) near'")
        v = [float(x) for x in tok[1:]]
        return cls(v[0], v[1], v[2], v[3], int(v[4]), int(v[5]), np.array(v[6:15]), np.array(v[15:18]), v[18])


def save_cameras(path, cameras) -> None:
    Path(path).write_text("".join(c.to_line() + "\n" for c in cameras))


def load_cameras(path) -> list[Camera]:
    out = []
    for k, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.append(Camera.from_line(line))
        except (InputError, ValueError) as exc:
            raise SceneParseError(str(exc), path=path, line=k) from None
    return out


def default_sh_light(channels: int = 3) -> ShVector:
    """Constant radiance 1/pi, so that clamped-cosine transfer yields ``C_d = rho_d``."""
    c = np.zeros((SH_COEFFS, channels))
    c[0] = 2.0 / math.sqrt(math.pi)
    return ShVector(c, SH_BANDS)


@dataclass
class Scene:
    splats: Splats
    sh_light: ShVector
    decoder: TransferDecoder
    reflection_map: Cubemap
    env_map: Cubemap
    visibility: object | None = None  # pbr.VisibilityGrid

    def __post_init__(self):
        if self.sh_light.bands != SH_BANDS:
            raise InputError("sh_light must have 3 bands")

    @classmethod
    def empty(cls, face_res: int = 128, seed: int = 0) -> "Scene":
        return cls(
            Splats.empty(),
            default_sh_light(),
            TransferDecoder.init(seed),
            Cubemap.constant(0.5, face_res),
            Cubemap.constant(0.5, face_res),
        )

    def copy(self) -> "Scene":
        return Scene(
            self.splats.copy(),
            ShVector(self.sh_light.coeffs.copy(), self.sh_light.bands),
            self.decoder.copy(),
            self.reflection_map.copy(),
            self.env_map.copy(),
            self.visibility,
        )

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.splats) == 0:
            return -np.ones(3), np.ones(3)
        p = self.splats.position
        return p.min(axis=0), p.max(axis=0)


# ---------------------------------------------------------------- serialization


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=np.float64).reshape(-1))


def _scene_file(path) -> Path:
    p = Path(path)
    return p if p.suffix == ".txt" else p / "scene.txt"


def save_cubemap(cubemap: Cubemap, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if cubemap.channels not in (1, 3):
        raise InputError("only 1- or 3-channel cubemaps can be written")
    for k, name in enumerate(FACE_NAMES):
        write_pfm(d / f"{name}.pfm", cubemap.faces[k])


def load_cubemap(directory) -> Cubemap:
    d = Path(directory)
    faces = []
    for name in FACE_NAMES:
        f = d / f"{name}.pfm"
        if not f.exists():
            raise SceneParseError("missing cubemap face", path=f)
        img = read_pfm(f)
        faces.append(img if img.ndim == 3 else img[..., None])
    shapes = {f.shape for f in faces}
    if len(shapes) != 1:
        raise SceneParseError(f"cubemap faces disagree in shape: {sorted(shapes)}", path=d)
    try:
        return Cubemap(np.stack(faces))
    except InputError as exc:
        raise SceneParseError(str(exc), path=d) from None


def scene_save(scene: Scene, path) -> Path:
    """Write ``scene`` to a directory; returns the scene text file path."""
    sf = _scene_file(path)
    root = sf.parent
    root.mkdir(parents=True, exist_ok=True)
    dec = scene.decoder
    lines = [
        f"rtrscene {FORMAT_VERSION}",
        f"splats {len(scene.splats)}",
        f"sh_light {scene.sh_light.bands} {scene.sh_light.channels} {_fmt(scene.sh_light.coeffs)}",
        f"decoder {dec.hidden} {dec.feature_dim}",
    ]
    lines += [f"{p} {_fmt(getattr(dec, p))}" for p in TransferDecoder.PARAMS]
    lines.append("fields " + " ".join(f"{n}:{w}" for n, w, _, _ in SPLAT_FIELDS))
    m = scene.splats.matrix()
    lines += ["s " + _fmt(row) for row in m]
    lines.append("end")
    sf.write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_cubemap(scene.reflection_map, root / "reflection_map")
    save_cubemap(scene.env_map, root / "env_map")
    vis = root / "visibility.visgrid"
    if scene.visibility is not None:
        scene.visibility.save(vis)
    elif vis.exists():
        vis.unlink()
    return sf


def _floats(tok, path, line, name, count=None):
    try:
        vals = np.array([float(t) for t in tok], dtype=np.float64)
    except ValueError as exc:
        raise SceneParseError(f"not a number ({exc})", path=path, line=line, field=name) from None
    if count is not None and vals.size != count:
        raise SceneParseError(f"expected {count} values, got {vals.size}", path=path, line=line, field=name)
    if not np.all(np.isfinite(vals)):
        raise SceneParseError("non-finite value", path=path, line=line, field=name)
    return vals


def scene_load(path) -> Scene:
    sf = _scene_file(path)
    if not sf.exists():
        raise SceneParseError("scene file not found", path=sf)
    root = sf.parent
    rows = []
    for k, raw in enumerate(sf.read_text(encoding="utf-8").splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if text:
            rows.append((k, text.split()))
    it = iter(rows)

    def expect(key):
        try:
            k, tok = next(it)
        except StopIteration:
            raise SceneParseError(f"unexpected end of file, expected {key!r}", path=sf) from None
        if tok[0] != key:
            raise SceneParseError(f"expected {key!r}, found {tok[0]!r}", path=sf, line=k)
        return k, tok[1:]

    k, tok = expect("rtrscene")
    if tok != [str(FORMAT_VERSION)]:
        raise SceneParseError(f"unsupported version {' '.join(tok)}", path=sf, line=k)
    k, tok = expect("splats")
    try:
        n = int(tok[0])
    except (ValueError, IndexError):
        raise SceneParseError("bad splat count", path=sf, line=k) from None
    k, tok = expect("sh_light")
    bands, channels = int(tok[0]), int(tok[1])
    sh = ShVector(_floats(tok[2:], sf, k, "sh_light", bands * bands * channels).reshape(bands * bands, channels), bands)
    k, tok = expect("decoder")
    hidden, feat = int(tok[0]), int(tok[1])
    shapes = {
        "w1": (hidden, 3), "b1": (hidden,), "w2": (hidden, hidden + feat),
        "b2": (hidden,), "w3": (SH_COEFFS, hidden), "b3": (SH_COEFFS,),
    }
    dec = {}
    for p in TransferDecoder.PARAMS:
        k, tok = expect(p)
        dec[p] = _floats(tok, sf, k, p, int(np.prod(shapes[p]))).reshape(shapes[p])
    k, tok = expect("fields")
    declared = [t.split(":") for t in tok]
    expected = [[nm, str(w)] for nm, w, _, _ in SPLAT_FIELDS]
    if declared != expected:
        raise SceneParseError("field layout does not match this version", path=sf, line=k)
    width = sum(w for _, w, _, _ in SPLAT_FIELDS)
    data = np.zeros((n, width))
    for r in range(n):
        k, tok = expect("s")
        data[r] = _floats(tok, sf, k, "splat", width)
        col = 0
        for name, w, lo, hi in SPLAT_FIELDS:
            v = data[r, col:col + w]
            if (lo is not None and np.any(v < lo)) or (hi is not None and np.any(v > hi)):
                raise SceneParseError("field out of range", path=sf, line=k, field=name)
            if name == "rotation" and abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise SceneParseError("rotation is not a unit quaternion", path=sf, line=k, field=name)
            col += w
    expect("end")
    arrays, col = {}, 0
    for name, w, _, _ in SPLAT_FIELDS:
        arrays[name] = data[:, col:col + w]
        col += w
    visibility = None
    vis = root / "visibility.visgrid"
    if vis.exists():
        from .pbr import VisibilityGrid

        visibility = VisibilityGrid.load(vis)
    return Scene(
        Splats(**arrays),
        sh,
        TransferDecoder(**dec),
        load_cubemap(root / "reflection_map"),
        load_cubemap(root / "env_map"),
        visibility,
    )


# ---------------------------------------------------------------- synthetic init


@dataclass
class SyntheticSpec:
    """Primitive to seed splats on.

    ``flatten`` is the ratio of the normal-axis scale to the tangent scale;
    1.0 gives isotropic splats.
    """

    primitive: str = "sphere"  # sphere | plane | box
    count: int = 1000
    size: float = 1.0  # sphere radius, plane/box half-extent
    center: tuple = (0.0, 0.0, 0.0)
    scale: float | None = None  # tangent std-dev; None = 0.6 * mean spacing
    flatten: float = 1.0
    opacity: float = 0.8
    seed: int = 0
    face_res: int = 128
    position_jitter: float = 0.0
    normal_jitter_deg: float = 0.0
    # defaults for fields without a prescribed initial value
    rho_d: float = 0.5
    rho_s: float = 0.0
    R_t: float = 1.0
    R_r: float = 0.5
    R_i: float = 0.01
    albedo: float = 0.5
    metallic: float = 0.5
    roughness: float = 0.5
    L_ind: float = 0.0
    feature_std: float = 0.01


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def _surface_samples(spec: SyntheticSpec, rng):
    n, a = spec.count, spec.size
    if spec.primitive == "sphere":
        nrm = _fibonacci_sphere(n)
        return a * nrm, nrm, 4.0 * math.pi * a * a
    if spec.primitive == "plane":
        side = max(1, int(math.ceil(math.sqrt(n))))
        g = (np.arange(side) + 0.5) / side * 2.0 - 1.0
        x, y = np.meshgrid(g, g)
        pts = np.stack([x.ravel(), y.ravel(), np.zeros(side * side)], axis=-1)[:n] * a
        nrm = np.tile([0.0, 0.0, 1.0], (pts.shape[0], 1))
        return pts, nrm, 4.0 * a * a
    if spec.primitive == "box":
        face = np.arange(n) % 6
        uv = rng.uniform(-1.0, 1.0, (n, 2))
        axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
        pts = np.zeros((n, 3))
        nrm = np.zeros((n, 3))
        for ax in range(3):
            sel = axis == ax
            others = [i for i in range(3) if i != ax]
            pts[sel, ax] = sign[sel]
            pts[np.ix_(sel, others)] = uv[sel]
            nrm[sel, ax] = sign[sel]
        return pts * a, nrm, 24.0 * a * a
    raise InputError(f"unknown primitive {spec.primitive!r}")


def _tilt(normals, deg, rng):
    if deg <= 0:
        return normals
    t = rng.normal(size=normals.shape)
    t -= (t * normals).sum(-1, keepdims=True) * normals
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    ang = np.radians(deg) * np.abs(rng.normal(size=(normals.shape[0], 1)))
    return normals * np.cos(ang) + t * np.sin(ang)


def init_synthetic(spec: SyntheticSpec | dict) -> Scene:
    """Seed a scene with splats on a primitive surface (deterministic in ``seed``)."""
    if isinstance(spec, dict):
        spec = SyntheticSpec(**spec)
    rng = np.random.default_rng(spec.seed)
    pts, nrm, area = _surface_samples(spec, rng)
    n = pts.shape[0]
    pts = pts + np.asarray(spec.center, dtype=np.float64)
    if spec.position_jitter > 0:
        pts = pts + rng.normal(scale=spec.position_jitter, size=pts.shape)
    scale = spec.scale if spec.scale is not None else 0.6 * math.sqrt(area / max(n, 1))
    log_scale = np.tile(np.log([scale, scale, scale * spec.flatten]), (n, 1))
    orient = _tilt(nrm, spec.normal_jitter_deg, rng)
    full = lambda v, w: np.full((n, w), v, dtype=np.float64)
    splats = Splats(
        position=pts,
        log_scale=log_scale,
        rotation=quat_from_z_to(orient),
        opacity_logit=full(float(logit(spec.opacity)), 1),
        rho_d=full(spec.rho_d, 3),
        c_t=clamped_cosine_sh(nrm, SH_BANDS),
        rho_s=full(spec.rho_s, 3),
        f_t=rng.normal(scale=spec.feature_std, size=(n, FEATURE_DIM)),
        R_t=full(spec.R_t, 3),
        R_r=full(spec.R_r, 1),
        R_i=full(spec.R_i, 1),
        albedo=full(spec.albedo, 3),
        metallic=full(spec.metallic, 1),
        roughness=full(spec.roughness, 1),
        L_ind=full(spec.L_ind, 3),
    )
    return Scene(
        splats,
        default_sh_light(),
        TransferDecoder.init(spec.seed),
        Cubemap.constant(0.5, spec.face_res),
        Cubemap.constant(0.5, spec.face_res),
    )
