import math

import numpy as np
import pytest
import torch

from hybridsplat import oracle
from hybridsplat.cubemap import Cubemap
from hybridsplat.errors import InputError, PreconditionError
from hybridsplat.ibl import build_brdf_lut, prefilter_cubemap
from hybridsplat.model import SceneTensors
from hybridsplat.oracle import sphere_quadrature
from hybridsplat.pbr import (VisibilityGrid, bake_visibility, build_irradiance, fresnel_f0, grid_bounds,
                             microfacet_eval, oct_decode, oct_encode, pbr_diffuse, pbr_shade, pbr_specular,
                             query_visibility, render_pbr)
from hybridsplat.raster import rasterize
from hybridsplat.scene import Camera, GaussianSplat, Scene, Splats, init_synthetic, logit
from hybridsplat.sh import cubemap_to_sh, uniform_sphere
from hybridsplat.shading import view_directions_t
from hybridsplat.validation import merge_scenes, smooth_env, sky_env

N_UP = np.array([0.0, 0.0, 1.0])


def test_f0_examples():
    assert np.allclose(fresnel_f0(np.array([0.9, 0.5, 0.1]), 0.0), 0.04)
    assert np.allclose(fresnel_f0(np.array([0.9, 0.5, 0.1]), 1.0), [0.9, 0.5, 0.1])
    assert np.allclose(fresnel_f0(np.array([1.0, 0.0, 0.5]), 0.5), [0.52, 0.02, 0.27])


def test_ggx_d_at_normal_for_unit_roughness():
    # r = 1 makes D = 1/pi; F = 1 with F0 = 1; G = 1 at n.v = n.i = 1 for any k
    f = microfacet_eval(N_UP, N_UP, N_UP, np.ones(3), 1.0, 1.0)
    k = 0.5
    g = (1 / (1 - k + k)) ** 2
    assert np.allclose(f, g / math.pi / 4.0)


def test_brdf_reciprocity():
    rng = np.random.default_rng(0)
    v = uniform_sphere(50, 1)
    i = uniform_sphere(50, 2)
    v[:, 2], i[:, 2] = np.abs(v[:, 2]) + 0.05, np.abs(i[:, 2]) + 0.05
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    i /= np.linalg.norm(i, axis=1, keepdims=True)
    r = rng.uniform(0.1, 1.0, 50)
    a = microfacet_eval(N_UP, v, i, np.full(3, 0.7), 0.3, r)
    b = microfacet_eval(N_UP, i, v, np.full(3, 0.7), 0.3, r)
    assert np.allclose(a, b, rtol=1e-12)


def _directional_albedo(nv, r, d, w):
    v = np.array([math.sqrt(1 - nv * nv), 0.0, nv])
    f = microfacet_eval(N_UP, v, d, np.ones(3), 1.0, r)[:, 0]
    return float((f * d[:, 2] * w).sum())


@pytest.fixture(scope="module")
def upper_quadrature():
    d, w = sphere_quadrature(256, 512)
    up = d[:, 2] > 0
    return d[up], w[up]


@pytest.mark.parametrize("r", [0.3, 0.6, 0.9])
@pytest.mark.parametrize("nv", [0.5, 0.7, 1.0])
def test_white_furnace_per_direction(upper_quadrature, nv, r):
    alb = _directional_albedo(nv, r, *upper_quadrature)
    assert 0.3 < alb <= 1.0


@pytest.mark.parametrize("r", [0.3, 0.6, 0.9])
def test_white_furnace_cosine_average(upper_quadrature, r):
    # average over view directions with density 2 n.v
    x, wx = np.polynomial.legendre.leggauss(16)
    nv = 0.5 * (x + 1.0)
    avg = sum(wi * 0.5 * 2 * c * _directional_albedo(c, r, *upper_quadrature) for c, wi in zip(nv, wx))
    assert avg <= 1.0


def _const_grid(v, res=4):
    return VisibilityGrid.constant(v, -np.ones(3), np.ones(3), res)


def test_query_visibility_examples():
    x = np.zeros((5, 3))
    n = uniform_sphere(5, 0)
    assert np.allclose(query_visibility(_const_grid(1.0), x, n), 1.0, atol=1e-6)
    assert np.allclose(query_visibility(_const_grid(0.0), x, n), 0.0)
    assert np.allclose(query_visibility(_const_grid(0.4), x, n), 0.4, atol=1e-6)
    assert query_visibility(_const_grid(0.0), np.array([3.0, 0, 0]), N_UP) == 1.0


def test_query_offset_moves_along_normal():
    g = _const_grid(0.0)
    assert query_visibility(g, np.array([0.0, 0.0, 0.9]), N_UP) == 0.0
    assert query_visibility(g, np.array([0.0, 0.0, 0.9]), N_UP, offset=1.0) == 1.0


def test_pbr_diffuse_examples():
    irr = build_irradiance(cubemap_to_sh(Cubemap.constant(1.0, 8)))
    c = np.array([[0.6, 0.3, 0.1]])
    n = N_UP[None]
    full = pbr_diffuse(c, n, np.zeros((1, 3)), np.zeros((1, 3)), None, irr)
    assert np.allclose(full, c, rtol=1e-6)
    dark = pbr_diffuse(c, n, np.zeros((1, 3)), np.full((1, 3), 0.5), None, irr, visibility=np.zeros(1))
    assert np.allclose(dark, c / math.pi * 0.5)
    metal = pbr_diffuse(c, n, np.zeros((1, 3)), np.zeros((1, 3)), None, irr, metallic=1.0)
    assert np.all(metal == 0)


def test_pbr_diffuse_monotone_in_visibility():
    irr = build_irradiance(cubemap_to_sh(Cubemap.constant(2.0, 8)))
    v = np.linspace(0, 1, 11)
    n = np.tile(N_UP, (11, 1))
    out = pbr_diffuse(np.full((11, 3), 0.5), n, np.zeros((11, 3)), np.full((11, 3), 0.1), None, irr, visibility=v)
    assert np.all(np.diff(out[:, 0]) > 0)


def test_irradiance_constant_env():
    irr = build_irradiance(cubemap_to_sh(Cubemap.constant(0.8, 16)))
    assert np.allclose(irr.lookup(uniform_sphere(40, 3)), 0.8 * math.pi, rtol=1e-5)


def test_irradiance_band1_lobe():
    env = Cubemap.from_function(lambda d: (1.0 + d[:, 2:3]) * np.ones((1, 3)), 64)
    irr = build_irradiance(cubemap_to_sh(env), res=128)
    n = uniform_sphere(40, 4)
    expect = math.pi + 2.0 * math.pi / 3.0 * n[:, 2]
    assert np.allclose(irr.lookup(n)[:, 0], expect, rtol=0.01)


def test_octahedral_round_trip():
    d = uniform_sphere(200, 5)
    assert np.allclose(oct_decode(oct_encode(d)), d, atol=1e-12)


def test_specular_black_env():
    env = prefilter_cubemap(Cubemap.constant(0.0, 16))
    assert np.all(pbr_specular(N_UP, N_UP, np.ones(3), 1.0, 0.4, np.zeros(3), env) == 0)


def test_specular_back_facing_is_zero():
    env = prefilter_cubemap(Cubemap.constant(1.0, 16))
    assert np.all(pbr_specular(N_UP, -N_UP, np.ones(3), 1.0, 0.4, np.zeros(3), env) == 0)


def test_specular_mirror_reflects_env():
    env_fn = lambda d: np.stack([1 + d[:, 0], 1 + d[:, 1], 1 + d[:, 2]], 1)
    env = prefilter_cubemap(Cubemap.from_function(env_fn, 64))
    v = np.array([0.6, 0.0, 0.8])
    out = pbr_specular(N_UP, v, np.ones(3), 1.0, 0.0, np.zeros(3), env)
    ab = build_brdf_lut().lookup(0.8, 0.0).sum()
    assert np.allclose(out, ab * env_fn(np.array([[-0.6, 0.0, 0.8]]))[0], rtol=0.01)


def test_specular_requires_prefiltered_env():
    with pytest.raises(PreconditionError):
        pbr_specular(N_UP, N_UP, np.ones(3), 1.0, 0.4, np.zeros(3), Cubemap.constant(1.0, 8))


@pytest.mark.parametrize("env_fn", [smooth_env, sky_env])
@pytest.mark.parametrize("r", [0.2, 0.5, 0.8])
def test_specular_matches_monte_carlo(env_fn, r):
    env = prefilter_cubemap(Cubemap.from_function(env_fn, 64))
    n = np.array([0.0, 0.3, 0.954])
    n /= np.linalg.norm(n)
    t = np.cross(n, [1.0, 0.0, 0.0])
    t /= np.linalg.norm(t)
    v = 0.7 * n + math.sqrt(1 - 0.49) * t
    c = np.array([0.9, 0.6, 0.3])
    est, _ = oracle.mc_shade(np.zeros(3), n, v, oracle.Material(tuple(c), 1.0, r), env_fn,
                             cfg=oracle.McConfig(16384, 0, "microfacet"))
    got = pbr_specular(n, v, c, 1.0, r, np.zeros(3), env)
    assert np.abs(got - est).mean() / est.mean() < 0.07


# ---------------------------------------------------------------- bake


def test_bake_empty_scene_is_open():
    s = Scene.empty(face_res=4)
    g = bake_visibility(s, res=3, face_res=4)
    assert np.allclose(query_visibility(g, np.zeros((4, 3)), uniform_sphere(4, 0)), 1.0, atol=1e-6)


@pytest.fixture(scope="module")
def shell_grid():
    s = init_synthetic(dict(count=800, size=1.0, flatten=0.2, opacity=0.95, face_res=4))
    return bake_visibility(s, res=5, face_res=8)


def test_bake_closed_sphere(shell_grid):
    v = query_visibility(shell_grid, np.zeros((6, 3)), uniform_sphere(6, 1))
    assert v.max() < 0.05
    corner = shell_grid.centers()[0, 0, 0]
    out = corner / np.linalg.norm(corner)
    assert query_visibility(shell_grid, corner, out) > 0.85


def test_bake_half_space():
    plane = init_synthetic(dict(primitive="plane", count=900, size=2.0, flatten=0.2, opacity=0.95, face_res=4))
    marker = Scene(Splats.from_list([GaussianSplat(np.array([0.0, 0.0, 0.8]), np.log([0.01] * 3), np.array([1.0, 0, 0, 0]),
                                                   float(logit(0.01)))]), plane.sh_light, plane.decoder,
                   plane.reflection_map, plane.env_map)
    scene = merge_scenes(plane, marker)
    g = bake_visibility(scene, res=5, face_res=16)
    x = np.array([0.0, 0.0, 0.4])
    assert query_visibility(g, x, N_UP) > 0.9
    assert query_visibility(g, x, -N_UP) < 0.1
    side = np.array([1.0, 0.0, 0.0])
    ref, _ = oracle.raycast_visibility(scene, x, side, rays=2048)
    assert 0.5 <= ref < 0.7  # finite plane: slightly more than half the lobe escapes
    assert query_visibility(g, x, side) == pytest.approx(ref, abs=0.1)


def test_grid_bounds_dilation():
    lo, hi = grid_bounds(np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 4.0]]), 0.1)
    assert np.allclose(lo, [-0.1, -0.2, -0.4]) and np.allclose(hi, [1.1, 2.2, 4.4])


def test_visgrid_round_trip_and_rebake(tmp_path, small_scene):
    a = bake_visibility(small_scene, res=3, face_res=8)
    b = bake_visibility(small_scene, res=3, face_res=8)
    a.save(tmp_path / "a.visgrid")
    b.save(tmp_path / "b.visgrid")
    assert (tmp_path / "a.visgrid").read_bytes() == (tmp_path / "b.visgrid").read_bytes()
    back = VisibilityGrid.load(tmp_path / "a.visgrid")
    assert np.array_equal(back.coeffs, a.coeffs) and np.array_equal(back.lo, a.lo)


def test_visgrid_bad_file(tmp_path):
    (tmp_path / "x.visgrid").write_bytes(b"nonsense")
    with pytest.raises(InputError):
        VisibilityGrid.load(tmp_path / "x.visgrid")


# ---------------------------------------------------------------- full branch


def _cam():
    return Camera.look_at((0.0, -2.5, 0.8), (0.0, 0.0, 0.0), width=20, height=20)


def test_pbr_requires_grid(small_scene):
    cam = _cam()
    gb = rasterize(small_scene, cam, ("normal", "depth", "albedo", "metallic", "roughness", "L_ind"))
    with pytest.raises(PreconditionError):
        pbr_shade(gb, small_scene)
    with pytest.raises(PreconditionError):
        render_pbr(SceneTensors.from_scene(small_scene), cam)


def test_pbr_black_env_and_indirect(small_scene):
    small_scene.env_map = Cubemap.constant(0.0, 8)
    small_scene.splats.L_ind[:] = 0.0
    small_scene.visibility = _const_grid(0.5)
    out = render_pbr(SceneTensors.from_scene(small_scene), _cam())
    assert torch.all(out.image == 0)


def test_pbr_black_albedo_metal(small_scene):
    # F0 = 0: only the grazing Fresnel term of the split sum remains
    small_scene.splats.albedo[:] = 0.0
    small_scene.splats.metallic[:] = 1.0
    small_scene.env_map = Cubemap.constant(1.0, 8)
    small_scene.visibility = _const_grid(1.0)
    out = render_pbr(SceneTensors.from_scene(small_scene), _cam())
    assert torch.all(out.diffuse == 0)
    covered = out.gbuffer.alpha > 0.5
    lut = build_brdf_lut()
    assert out.image[covered].max() <= lut.table[..., 1].max() + 1e-9


def test_pbr_lambertian_sphere_diffuse(small_scene):
    small_scene.splats.albedo[:] = [0.6, 0.4, 0.2]
    small_scene.splats.metallic[:] = 0.0
    small_scene.env_map = Cubemap.constant(1.0, 8)
    small_scene.visibility = _const_grid(1.0)
    out = render_pbr(SceneTensors.from_scene(small_scene), _cam())
    covered = out.gbuffer.alpha > 0.5
    assert covered.sum() > 20
    assert torch.allclose(out.diffuse[covered], torch.tensor([0.6, 0.4, 0.2], dtype=torch.float64), rtol=1e-5)
    assert torch.all(out.specular[covered] >= 0)
    nv = (out.gbuffer.normal() * view_directions_t(out.gbuffer.camera)).sum(-1)
    interior = (out.gbuffer.alpha > 0.98) & (nv > 0.7)
    assert interior.sum() > 10
    rel = out.image[interior] / torch.tensor([0.6, 0.4, 0.2], dtype=torch.float64) - 1.0
    assert rel.min() >= -0.02 and rel.max() < 0.25  # plus a thin dielectric specular layer


def test_pbr_three_splats_match_monte_carlo():
    splats = [GaussianSplat(np.array([x, 0.0, 0.0]), np.log([0.45, 0.9, 0.01]), np.array([1.0, 0, 0, 0]),
                            float(logit(0.99)), albedo=np.array(c), metallic=m, roughness=0.6)
              for x, c, m in ((-0.5, (0.8, 0.2, 0.2), 0.0), (0.0, (0.2, 0.8, 0.2), 0.5), (0.5, (0.2, 0.2, 0.8), 1.0))]
    scene = Scene.empty(face_res=32)
    scene.splats = Splats.from_list(splats)
    scene.env_map = Cubemap.from_function(smooth_env, 32)
    scene.visibility = _const_grid(1.0)
    cam = Camera.look_at((0.0, -0.6, 2.5), (0.0, 0.0, 0.0), fov_deg=30, width=12, height=12)
    gb = rasterize(scene, cam, ("normal", "depth", "albedo", "metallic", "roughness", "L_ind"))
    img = pbr_shade(gb, scene).numpy()
    keep = gb.alpha.numpy() >= 0.5
    x = gb.positions().numpy()
    n = gb.normal().numpy()
    alb = gb.normalized("albedo").numpy()
    met = gb.normalized("metallic").numpy()[..., 0]
    rough = gb.normalized("roughness").numpy()[..., 0]
    # coverage of each camera ray from the oracle's own splat model
    occ = oracle.SplatOccluder.from_scene(scene)
    rays = cam.pixel_rays().reshape(-1, 3)
    cover = occ.opacity_along(np.broadcast_to(cam.center, rays.shape), rays).reshape(keep.shape)
    ref = np.zeros_like(img)
    for i, j in zip(*np.nonzero(keep)):
        v = cam.center - x[i, j]
        mat = oracle.Material(tuple(alb[i, j]), float(met[i, j]), float(rough[i, j]))
        est, _ = oracle.mc_shade(x[i, j], n[i, j], v, mat, smooth_env, cfg=oracle.McConfig(4096, 1))
        ref[i, j] = cover[i, j] * est
    psnr = 10 * math.log10(1.0 / ((img - ref) ** 2).mean())
    assert keep.sum() > 60
    assert psnr > 30
