"""Brute-force references for the approximate shading paths.

Nothing here imports the pipeline: the SH basis comes from
``scipy.special``, the BRDF and occlusion are evaluated directly,
visibility is ray-marched through the 3D Gaussians, and environments are
plain callables ``env(dirs) -> radiance``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import sph_harm_y

from .errors import InputError

OCCLUSION_THRESHOLD = 0.5


@dataclass
class McConfig:
    samples: int = 4096
    seed: int = 0
    kind: str = "full"  # irradiance | microfacet | full

    def __post_init__(self):
        if self.samples < 1024:
            raise InputError("Monte Carlo references need at least 1024 samples")
        if self.kind not in ("irradiance", "microfacet", "full"):
            raise InputError(f"unknown integrator kind {self.kind!r}")


@dataclass
class Material:
    albedo: tuple = (0.5, 0.5, 0.5)
    metallic: float = 0.0
    roughness: float = 0.5
    specular: bool = True  # False gives a pure Lambertian surface


# ---------------------------------------------------------------- sampling helpers


def _frame(n):
    n = np.asarray(n, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t = np.cross(n, helper)
    t /= np.linalg.norm(t)
    return t, np.cross(n, t), n


def _to_world(local, frame):
    t, b, n = frame
    return local[..., 0:1] * t + local[..., 1:2] * b + local[..., 2:3] * n


def _cosine_dirs(u):
    r = np.sqrt(u[:, 0])
    phi = 2.0 * np.pi * u[:, 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u[:, 0]))], -1)


def _ggx_d(nh, a):
    a2 = a * a
    return a2 / (np.pi * (nh * nh * (a2 - 1.0) + 1.0) ** 2)


def _ggx_h(u, a):
    phi = 2.0 * np.pi * u[:, 0]
    ct = np.sqrt((1.0 - u[:, 1]) / (1.0 + (a * a - 1.0) * u[:, 1]))
    st = np.sqrt(np.maximum(0.0, 1.0 - ct * ct))
    return np.stack([st * np.cos(phi), st * np.sin(phi), ct], -1)


def _mean_and_err(x):
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])


def brdf_reference(n, v, l, albedo, metallic, roughness):
    """Direct GGX / Schlick / Smith (k = r^4/2) evaluation for many ``l``; returns ``(S, 3)``."""
    h = v + l
    h /= np.linalg.norm(h, axis=-1, keepdims=True)
    nv = max(float(np.dot(n, v)), 1e-6)
    nl = np.maximum(l @ n, 1e-6)
    nh = np.clip(h @ n, 0.0, 1.0)
    vh = np.clip(h @ v, 0.0, 1.0)
    a = max(roughness * roughness, 1e-4)
    k = roughness ** 4 / 2.0
    f0 = 0.04 * (1.0 - metallic) + metallic * np.asarray(albedo, dtype=np.float64)
    fres = f0 + (1.0 - f0) * ((1.0 - vh) ** 5)[:, None]
    g = nv / (nv * (1.0 - k) + k) * nl / (nl * (1.0 - k) + k)
    return (_ggx_d(nh, a) * g / (4.0 * nv * nl))[:, None] * fres


# ---------------------------------------------------------------- rendering equation


def mc_shade(x, n, v, material: Material, env, occluder=None, cfg: McConfig | None = None):
    """Monte Carlo estimate of reflected radiance at ``x`` (irradiance for ``kind="irradiance"``).

    ``env(dirs) -> (S, 3)`` gives incident radiance; ``occluder(origins, dirs)
    -> bool (S,)`` marks blocked rays.  Returns ``(estimate (3,), stderr (3,))``.
    """
    cfg = cfg or McConfig()
    rng = np.random.default_rng(cfg.seed)
    n = np.asarray(n, dtype=np.float64)
    n = n / np.linalg.norm(n)
    v = np.asarray(v, dtype=np.float64)
    v = v / np.linalg.norm(v)
    x = np.asarray(x, dtype=np.float64)
    frame = _frame(n)
    S = cfg.samples
    c = np.asarray(material.albedo, dtype=np.float64)

    def lit(dirs):
        L = np.asarray(env(dirs), dtype=np.float64).reshape(dirs.shape[0], -1)
        if occluder is not None:
            L = L * (~occluder(np.broadcast_to(x, dirs.shape), dirs))[:, None]
        return L

    if cfg.kind == "irradiance":
        d = _to_world(_cosine_dirs(rng.random((S, 2))), frame)
        return _mean_and_err(np.pi * lit(d))

    samples = np.zeros((S, 3))
    if cfg.kind == "full":
        d = _to_world(_cosine_dirs(rng.random((S, 2))), frame)
        samples += (1.0 - material.metallic) * c * lit(d)  # (c/pi) L cos / (cos/pi)
    if material.specular:
        samples += _specular_samples(x, n, v, material, lit, rng, S, frame)
    return _mean_and_err(samples)


def _specular_samples(x, n, v, material, lit, rng, S, frame):
    r = float(material.roughness)
    nv = float(np.dot(n, v))
    if nv <= 0:
        return np.zeros((S, 3))
    if r < 1e-3:
        o = 2.0 * nv * n - v
        f0 = 0.04 * (1.0 - material.metallic) + material.metallic * np.asarray(material.albedo, dtype=np.float64)
        f = f0 + (1.0 - f0) * (1.0 - nv) ** 5
        return np.broadcast_to(f * lit(o[None])[0], (S, 3)).copy()
    a = max(r * r, 1e-4)
    h = _to_world(_ggx_h(rng.random((S, 2)), a), frame)
    vh = h @ v
    l = 2.0 * vh[:, None] * h - v
    nl = l @ n
    ok = (nl > 0) & (vh > 0)
    nh = np.clip(h @ n, 1e-12, 1.0)
    pdf = _ggx_d(nh, a) * nh / (4.0 * np.maximum(vh, 1e-12))
    f = brdf_reference(n, v, l, material.albedo, material.metallic, r)
    w = np.where(ok, np.maximum(nl, 0.0) / np.maximum(pdf, 1e-12), 0.0)
    return f * w[:, None] * lit(l)


# ---------------------------------------------------------------- SH via scipy


def real_sh(dirs, bands: int) -> np.ndarray:
    """Orthonormal real SH without the Condon-Shortley phase, index ``l*l + l + m``."""
    d = np.asarray(dirs, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    out = []
    for l in range(bands):
        for m in range(-l, l + 1):
            y = sph_harm_y(l, abs(m), theta, phi)
            cs = (-1.0) ** abs(m)  # undo scipy's Condon-Shortley phase
            if m > 0:
                out.append(math.sqrt(2.0) * cs * y.real)
            elif m < 0:
                out.append(math.sqrt(2.0) * cs * y.imag)
            else:
                out.append(y.real)
    return np.stack(out, axis=-1)


def sphere_quadrature(n_theta: int = 24, n_phi: int = 48):
    """Gauss-Legendre in cos(theta) times uniform azimuth; exact for low-degree polynomials."""
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    phi = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1.0 - zz * zz)
    dirs = np.stack([s * np.cos(pp), s * np.sin(pp), zz], -1).reshape(-1, 3)
    w = (wz[:, None] * np.full(n_phi, 2.0 * np.pi / n_phi)[None]).reshape(-1)
    return dirs, w


@dataclass
class TransferReport:
    matrix: np.ndarray  # (bands^2, bands^2), rows: lighting index j, cols: output index k
    light: np.ndarray  # (bands^2, C)
    out_dirs: np.ndarray
    radiance_matrix: np.ndarray  # (K, C) from the transfer matrix
    radiance_quadrature: np.ndarray  # (K, C) direct integral
    rel_error: float


def transfer_matrix_reference(transfer, light_fn, bands: int = 3, out_dirs=None, quad=(24, 48)) -> TransferReport:
    """Transfer matrix by double SH projection and its radiance prediction.

    ``transfer(i_dirs (M, 3), o_dirs (K, 3)) -> (K, M)`` is the full transfer
    kernel (visibility, BRDF and cosine); ``light_fn(dirs) -> (M, C)`` the
    incident radiance.  Radiance from ``sum_jk c_j M_jk Y_k(o)`` is compared
    against direct quadrature of ``int L(i) T(i, o) di``.
    """
    dirs, w = sphere_quadrature(*quad)
    Y = real_sh(dirs, bands)  # (M, J)
    L = np.asarray(light_fn(dirs), dtype=np.float64).reshape(dirs.shape[0], -1)
    c = Y.T @ (L * w[:, None])  # light coefficients
    T = np.asarray(transfer(dirs, dirs), dtype=np.float64)  # (K=M, M)
    ct = (T * w[None, :]) @ Y  # transfer vector per output direction, (K, J)
    matrix = ct.T @ (Y * w[:, None])  # (J, K)
    if out_dirs is None:
        out_dirs = dirs[:: max(1, dirs.shape[0] // 64)]
    out_dirs = np.asarray(out_dirs, dtype=np.float64)
    radiance_matrix = real_sh(out_dirs, bands) @ (matrix.T @ c)
    T_out = np.asarray(transfer(dirs, out_dirs), dtype=np.float64)
    radiance_quad = (T_out * w[None, :]) @ L
    err = np.abs(radiance_matrix - radiance_quad).max() / max(np.abs(radiance_quad).max(), 1e-12)
    return TransferReport(matrix, c, out_dirs, radiance_matrix, radiance_quad, float(err))


# ---------------------------------------------------------------- ray-marched occlusion


def _rotation(q):
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], 1)


@dataclass
class SplatOccluder:
    """Ray opacity of a Gaussian cloud, each Gaussian evaluated at its peak along the ray."""

    position: np.ndarray
    precision: np.ndarray  # inverse covariances (N, 3, 3)
    opacity: np.ndarray
    threshold: float = OCCLUSION_THRESHOLD
    t_min: float = 1e-6
    chunk: int = 256

    @classmethod
    def from_scene(cls, scene, threshold: float = OCCLUSION_THRESHOLD) -> "SplatOccluder":
        s = scene.splats
        R = _rotation(np.asarray(s.rotation, dtype=np.float64))
        inv_s2 = np.exp(-2.0 * np.asarray(s.log_scale, dtype=np.float64))
        prec = (R * inv_s2[:, None, :]) @ R.transpose(0, 2, 1)
        op = 1.0 / (1.0 + np.exp(-np.asarray(s.opacity_logit, dtype=np.float64).reshape(-1)))
        return cls(np.asarray(s.position, dtype=np.float64), prec, op, threshold)

    def opacity_along(self, origins, dirs) -> np.ndarray:
        """Accumulated opacity ``1 - prod(1 - alpha_i)`` for each ray."""
        o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        o = np.broadcast_to(o, d.shape)
        out = np.zeros(d.shape[0])
        if self.position.shape[0] == 0:
            return out
        for s in range(0, d.shape[0], self.chunk):
            oo, dd = o[s:s + self.chunk], d[s:s + self.chunk]
            diff = self.position[None] - oo[:, None]  # (R, N, 3)
            Pd = np.einsum("nij,rj->rni", self.precision, dd)
            dPd = (Pd * dd[:, None]).sum(-1)
            t = (Pd * diff).sum(-1) / np.maximum(dPd, 1e-30)
            q = (diff * np.einsum("nij,rnj->rni", self.precision, diff)).sum(-1) - t * t * dPd
            alpha = np.where((t > self.t_min) & (q <= 9.0), np.minimum(0.99, self.opacity[None] * np.exp(-0.5 * q)), 0.0)
            out[s:s + self.chunk] = 1.0 - np.prod(1.0 - alpha, axis=1)
        return out

    def __call__(self, origins, dirs) -> np.ndarray:
        return self.opacity_along(origins, dirs) >= self.threshold


def raycast_visibility(scene, x, n, rays: int = 1024, seed: int = 0, threshold: float = OCCLUSION_THRESHOLD):
    """Fraction of cosine-distributed rays from ``x`` that stay unoccluded; returns ``(V, stderr)``."""
    occ = scene if isinstance(scene, SplatOccluder) else SplatOccluder.from_scene(scene, threshold)
    rng = np.random.default_rng(seed)
    n = np.asarray(n, dtype=np.float64)
    d = _to_world(_cosine_dirs(rng.random((rays, 2))), _frame(n / np.linalg.norm(n)))
    vis = (~occ(np.broadcast_to(np.asarray(x, dtype=np.float64), d.shape), d)).astype(np.float64)
    return float(vis.mean()), float(vis.std(ddof=1) / math.sqrt(rays)) if rays > 1 else 0.0


# ---------------------------------------------------------------- analytic sphere renders


def render_sphere(camera, center, radius, material: Material, env, cfg: McConfig | None = None, supersample: int = 1,
                  background=0.0):
    """Per-pixel Monte Carlo render of an analytic sphere; returns ``(image, mask, normals)``.

    ``mask`` is the pixel coverage from ``supersample**2`` sub-pixel rays and
    ``normals`` the normal at the central ray (zero where it misses).
    """
    cfg = cfg or McConfig()
    center = np.asarray(center, dtype=np.float64)
    H, W = camera.height, camera.width
    eye = -camera.R.T @ camera.t
    img = np.zeros((H, W, 3))
    cover = np.zeros((H, W))
    nrm = np.zeros((H, W, 3))
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    offs = (np.arange(supersample) + 0.5) / supersample
    for sy in offs:
        for sx in offs:
            j, i = np.meshgrid(np.arange(W) + sx, np.arange(H) + sy)
            d = np.stack([(j - camera.cx) / camera.fx, (i - camera.cy) / camera.fy, np.ones_like(j)], -1) @ camera.R
            d /= np.linalg.norm(d, axis=-1, keepdims=True)
            oc = eye - center
            b = d @ oc
            disc = b * b - (oc @ oc - radius * radius)
            hit = disc > 0
            t = -b - np.sqrt(np.maximum(disc, 0.0))
            hit &= t > 0
            for y, x in zip(*np.nonzero(hit)):
                p = eye + t[y, x] * d[y, x]
                nn = (p - center) / radius
                seed = cfg.seed + (y * W + x) * 7919
                est, _ = mc_shade(p, nn, -d[y, x], material, env, None, McConfig(cfg.samples, seed, cfg.kind))
                img[y, x] += est
                if sx == offs[len(offs) // 2] and sy == offs[len(offs) // 2]:
                    nrm[y, x] = nn
            img[~hit] += bg
            cover += hit
    n2 = supersample * supersample
    return img / n2, cover / n2, nrm


# ---------------------------------------------------------------- finite differences


def finite_diff(fn, params, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``params`` (any shape)."""
    p = np.array(params, dtype=np.float64)
    g = np.zeros_like(p)
    flat, gf = p.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + step
        hi = float(fn(p))
        flat[k] = old - step
        lo = float(fn(p))
        flat[k] = old
        gf[k] = (hi - lo) / (2.0 * step)
    return g


# ---------------------------------------------------------------- reports


@dataclass
class OracleCase:
    case: str
    estimate: float
    stderr: float
    pipeline: float
    rel_error: float
    tolerance: float = float("nan")
    passed: bool = True
    note: str = ""


REPORT_FIELDS = ("case", "estimate", "stderr", "pipeline", "rel_error", "tolerance", "passed", "note")


def write_report(path, cases) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for c in cases:
            w.writerow([c.case, repr(c.estimate), repr(c.stderr), repr(c.pipeline), repr(c.rel_error), repr(c.tolerance),
                        int(c.passed), c.note])
    return path
