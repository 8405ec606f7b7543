import math

import numpy as np
import pytest
import torch

from conftest import axis_camera
from hybridsplat.cubemap import Cubemap, texel_directions
from hybridsplat.ibl import (build_brdf_lut, ggx_half_vectors, hammersley, integrate_brdf, mip_chain_t, mip_count,
                             prefilter_cubemap, sample_cube_t, sample_mips_t, tangent_frame)
from hybridsplat.model import SceneTensors
from hybridsplat.raster import GBuffer
from hybridsplat.scene import GaussianSplat, TransferDecoder, default_sh_light
from hybridsplat.sh import ShVector, clamped_cosine_sh
from hybridsplat.shading import (blend_hybrid, decode_transfer, deferred_reflection, diffuse_rt_t, reflect,
                                 render_hybrid, shade_diffuse_rt, shade_specular_rt, specular_rt_t, splat_radiance_t,
                                 _decoder_tensors)

T = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64))


def test_reflect_examples():
    assert np.allclose(reflect([0, 0, 1], [0, 0, 1]), [0, 0, 1])
    s = 1 / math.sqrt(2)
    assert np.allclose(reflect([s, 0, s], [0, 0, 1]), [-s, 0, s])
    assert torch.allclose(reflect(T([s, 0, s]), T([0, 0, 1])), T([-s, 0, s]))


def test_blend_examples():
    c_r, c_ref = np.array([1.0, 0.5, 0.0]), np.array([0.0, 0.5, 1.0])
    assert np.allclose(blend_hybrid(c_r, c_ref, 0.0), c_r)
    assert np.allclose(blend_hybrid(c_r, c_ref, 1.0), c_ref)
    assert np.allclose(blend_hybrid(c_r, c_ref, 0.25), [0.75, 0.5, 0.25])


def test_blend_gradient():
    c_r, c_ref = T([0.2, 0.4, 0.9]).requires_grad_(), T([0.7, 0.1, 0.3]).requires_grad_()
    r_i = T(0.3).requires_grad_()
    blend_hybrid(c_r, c_ref, r_i).sum().backward()
    assert r_i.grad.item() == pytest.approx((c_ref - c_r).sum().item())
    assert torch.allclose(c_r.grad, T([0.7] * 3)) and torch.allclose(c_ref.grad, T([0.3] * 3))


def _splat(**kw):
    s = GaussianSplat(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0]), 0.0)
    for k, v in kw.items():
        setattr(s, k, np.asarray(v, dtype=np.float64) if np.ndim(v) else v)
    return s


def test_diffuse_rt_default_light_returns_albedo():
    s = _splat(rho_d=[0.2, 0.5, 0.9], c_t=clamped_cosine_sh(np.array([0.0, 0.0, 1.0]), 3))
    assert np.allclose(shade_diffuse_rt(s, default_sh_light()), [0.2, 0.5, 0.9], rtol=1e-12)


def test_diffuse_rt_rectified_and_zero_albedo():
    s = _splat(rho_d=[0.5] * 3, c_t=-clamped_cosine_sh(np.array([0.0, 0.0, 1.0]), 3))
    assert np.all(shade_diffuse_rt(s, default_sh_light()) == 0.0)
    s = _splat(rho_d=[0.0] * 3, c_t=clamped_cosine_sh(np.array([0.0, 0.0, 1.0]), 3))
    assert np.all(shade_diffuse_rt(s, default_sh_light()) == 0.0)


def test_diffuse_rt_linear_in_light():
    rng = np.random.default_rng(0)
    s = _splat(rho_d=[0.3, 0.6, 0.9], c_t=clamped_cosine_sh(np.array([0.0, 0.6, 0.8]), 3))
    light = ShVector(rng.normal(size=(9, 3)) * 0.2 + np.eye(9, 3)[:, :1] * 3)
    a = shade_diffuse_rt(s, light)
    b = shade_diffuse_rt(s, ShVector(2.0 * light.coeffs))
    assert np.allclose(b, 2.0 * a)


def test_decoder_zeros():
    d = TransferDecoder.zeros()
    out = decode_transfer(d, np.ones(16), np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
    assert out.shape == (2, 9) and np.all(out == 0.0)
    s = _splat(rho_s=[1.0] * 3)
    assert np.all(shade_specular_rt(s, default_sh_light(), d, [0, 0, 1]) == 0.0)


def test_decoder_numpy_matches_torch():
    d = TransferDecoder.init(3)
    rng = np.random.default_rng(0)
    f, o = rng.normal(size=(5, 16)), rng.normal(size=(5, 3))
    from hybridsplat.shading import decode_transfer_t

    assert np.allclose(decode_transfer(d, f, o), decode_transfer_t(_decoder_tensors(d), T(f), T(o)).numpy(), atol=1e-12)


def test_decoder_lipschitz_in_direction():
    d = TransferDecoder.init(1)
    bound = np.linalg.norm(d.w3, 2) * np.linalg.norm(d.w2[:, :d.hidden], 2) * np.linalg.norm(d.w1, 2)
    rng = np.random.default_rng(2)
    f = rng.normal(size=16)
    o1, o2 = rng.normal(size=(200, 3)), rng.normal(size=(200, 3))
    diff = np.linalg.norm(decode_transfer(d, f, o1) - decode_transfer(d, f, o2), axis=1)
    assert np.all(diff <= bound * np.linalg.norm(o1 - o2, axis=1) + 1e-12)


def test_specular_rt_gradient_wrt_feature():
    d = _decoder_tensors(TransferDecoder.init(4))
    light = T(default_sh_light().coeffs) + T(np.random.default_rng(0).normal(size=(9, 3)) * 0.1)
    o = T([[0.0, 0.6, 0.8]])
    rho = T([[0.4, 0.5, 0.6]])
    f = T(np.random.default_rng(1).normal(size=(1, 16))).requires_grad_()
    fn = lambda f: specular_rt_t(rho, d, f, o, light).sum()
    fn(f).backward()
    h = 1e-6
    for i in range(16):
        e = torch.zeros_like(f)
        e[0, i] = h
        fd = (fn(f.detach() + e) - fn(f.detach() - e)).item() / (2 * h)
        assert abs(fd - f.grad[0, i].item()) < 1e-4


def test_specular_rectifier_after_dot():
    d = TransferDecoder.zeros()
    d.b3 = -np.eye(9)[0]  # transfer (-1, 0, ...) gives a negative dot product
    s = _splat(rho_s=[1.0] * 3)
    assert np.all(shade_specular_rt(s, default_sh_light(), d, [0, 0, 1]) == 0.0)
    d.b3 = np.eye(9)[0]
    assert np.allclose(shade_specular_rt(s, default_sh_light(), d, [0, 0, 1]), 2.0 / math.sqrt(math.pi))


def test_radiance_is_diffuse_plus_specular(small_scene, orbit_camera):
    small_scene.splats.rho_s[:] = 0.3
    small_scene.decoder = TransferDecoder.init(5)
    m = SceneTensors.from_scene(small_scene)
    full = splat_radiance_t(m, orbit_camera, True)
    diff = splat_radiance_t(m, orbit_camera, False)
    assert torch.all(full >= diff - 1e-15)
    assert torch.allclose(diff, diffuse_rt_t(m.splat["rho_d"], m.splat["c_t"], m.sh_light))
    assert (full - diff).abs().max() > 0


def _flat_gbuffer(size, normal, r_t, r_r, alpha=1.0):
    cam = axis_camera(size, size * 1.0)
    a = torch.full((size, size), float(alpha), dtype=torch.float64)
    ch = {
        "normal": T(normal).expand(size, size, 3) * a[..., None],
        "R_t": T(r_t).expand(size, size, 3) * a[..., None],
        "R_r": T([r_r]).expand(size, size, 1) * a[..., None],
    }
    return GBuffer(ch, a, cam)


def test_deferred_zero_tint_is_black():
    gb = _flat_gbuffer(8, [0, 0, -1], [0, 0, 0], 0.3)
    out = deferred_reflection(gb, prefilter_cubemap(Cubemap.constant(2.0, 16)))
    assert torch.all(out == 0)


def test_deferred_mirror_constant_map():
    gb = _flat_gbuffer(8, [0, 0, -1], [1, 1, 1], 0.0)
    out = deferred_reflection(gb, prefilter_cubemap(Cubemap.constant(0.7, 16)), build_brdf_lut())
    center = out[3:5, 3:5]
    ab = build_brdf_lut().lookup(0.999, 0.0).sum()
    assert torch.allclose(center, torch.full_like(center, 0.7 * ab), rtol=1e-6)
    assert ab == pytest.approx(1.0, abs=0.02)


def test_deferred_background_below_coverage():
    gb = _flat_gbuffer(8, [0, 0, -1], [1, 1, 1], 0.2, alpha=0.3)
    out = deferred_reflection(gb, prefilter_cubemap(Cubemap.constant(0.7, 16)), background=0.25)
    assert torch.all(out == 0.25)


def test_deferred_nonnegative_on_random_env():
    rng = np.random.default_rng(3)
    env = prefilter_cubemap(Cubemap(rng.uniform(0, 3, (6, 16, 16, 3)).astype(np.float32)))
    gb = _flat_gbuffer(8, [0.3, -0.2, -0.93], [0.8, 0.5, 0.2], 0.6)
    assert torch.all(deferred_reflection(gb, env) >= 0)


def test_deferred_differs_from_forward_average():
    # two half-coverage normals: shading the blended normal is not the blend of shaded normals
    env = prefilter_cubemap(Cubemap.from_function(lambda d: np.maximum(d[:, 0:1], 0.0) * np.ones((1, 3)) * 4, 16))
    n1, n2 = np.array([0.5, 0.0, -0.866]), np.array([-0.5, 0.0, -0.866])
    a = deferred_reflection(_flat_gbuffer(4, n1, [1] * 3, 0.0), env)[2, 2]
    b = deferred_reflection(_flat_gbuffer(4, n2, [1] * 3, 0.0), env)[2, 2]
    nb = (n1 + n2) / 2
    c = deferred_reflection(_flat_gbuffer(4, nb / np.linalg.norm(nb), [1] * 3, 0.0), env)[2, 2]
    assert (0.5 * (a + b) - c).abs().max() > 0.1


def test_hybrid_ri_zero_is_forward_only(small_scene, orbit_camera):
    small_scene.splats.R_i[:] = 0.0
    m = SceneTensors.from_scene(small_scene)
    out = render_hybrid(m, orbit_camera, background=0.2)
    gb = out.gbuffer
    expect = gb["C_r"] + (1 - gb.alpha[..., None]) * 0.2
    assert torch.allclose(out.image, expect, atol=1e-12)


def test_hybrid_background_on_empty_pixels(small_scene, orbit_camera):
    m = SceneTensors.from_scene(small_scene)
    out = render_hybrid(m, orbit_camera, background=[0.1, 0.2, 0.3])
    empty = out.gbuffer.alpha == 0
    assert empty.any()
    assert torch.allclose(out.image[empty], T([0.1, 0.2, 0.3]).expand(int(empty.sum()), 3))


def test_hybrid_gradients_reach_reflection_map(small_scene, orbit_camera):
    small_scene.splats.R_i[:] = 0.5
    m = SceneTensors.from_scene(small_scene, requires_grad=True)
    render_hybrid(m, orbit_camera).image.sum().backward()
    assert m.reflection_map.grad is not None and m.reflection_map.grad.abs().sum() > 0
    assert m.splat["R_i"].grad.abs().sum() > 0


# ---------------------------------------------------------------- LUT


def test_lut_bounds():
    t = build_brdf_lut().table
    assert t.shape == (64, 64, 2)
    assert t.min() >= 0 and np.all(t.sum(-1) <= 1 + 1e-12)


def test_lut_smooth_normal_limit():
    ab = build_brdf_lut().lookup(1.0, 0.0)
    assert ab[0] == pytest.approx(1.0, abs=0.02) and ab[1] == pytest.approx(0.0, abs=0.02)


def test_lut_deterministic():
    build_brdf_lut.cache_clear()
    a = build_brdf_lut().table.copy()
    build_brdf_lut.cache_clear()
    assert np.array_equal(a, build_brdf_lut(seed=3).table)


def test_lut_matches_high_sample_reference():
    lut = build_brdf_lut()
    c = (np.arange(64) + 0.5) / 64
    for i in (2, 20, 40, 60):
        ref = integrate_brdf(c, np.full(64, c[i]), samples=65536)
        ref = ref / np.maximum(ref.sum(-1, keepdims=True), 1.0)
        assert np.abs(lut.table[i] - ref).max() < 0.01


# ---------------------------------------------------------------- prefilter


def test_prefilter_constant_map():
    cm = prefilter_cubemap(Cubemap.constant(0.7, 32))
    assert len(cm.mips) == mip_count(32) == 4
    for m in cm.mips:
        assert np.allclose(m, 0.7, atol=1e-6)


def test_prefilter_level_zero_is_base():
    rng = np.random.default_rng(0)
    cm = Cubemap(rng.uniform(size=(6, 16, 16, 3)).astype(np.float32))
    assert np.array_equal(prefilter_cubemap(cm).mips[0], cm.faces)


def test_mip_counts():
    assert mip_count(64) == 5 and mip_count(128) == 6 and mip_count(4) == 1


def _smooth(d):
    return (1.0 + 0.8 * np.maximum(d[:, 2], 0.0) ** 2 + 0.3 * d[:, 0])[:, None] * np.ones((1, 3))


def test_prefilter_half_roughness_matches_mc():
    res = 64
    cm = prefilter_cubemap(Cubemap.from_function(_smooth, res))
    lv = 2  # roughness 0.5 with 5 levels
    mip = cm.mips[lv]
    dirs = texel_directions(res >> lv).reshape(-1, 3)[::37]
    xi = hammersley(65536)
    h = ggx_half_vectors(xi, 0.25)
    t, b = tangent_frame(dirs)
    hw = h[None, :, 0:1] * t[:, None] + h[None, :, 1:2] * b[:, None] + h[None, :, 2:3] * dirs[:, None]
    l = 2 * (hw * dirs[:, None]).sum(-1, keepdims=True) * hw - dirs[:, None]
    w = np.maximum((l * dirs[:, None]).sum(-1), 0)
    f = _smooth(l.reshape(-1, 3))[:, 0].reshape(w.shape)
    ref = (w * f).sum(1) / w.sum(1)
    got = mip.reshape(-1, 3)[::37, 0]
    assert np.abs(got / ref - 1).max() < 0.03


def test_mip_chain_t_matches_numpy():
    rng = np.random.default_rng(0)
    cm = Cubemap(rng.uniform(size=(6, 32, 32, 3)).astype(np.float32))
    np_m = prefilter_cubemap(cm).mips
    t_m = mip_chain_t(torch.as_tensor(cm.faces.astype(np.float64)))
    for a, b in zip(np_m, t_m):
        assert np.allclose(a, b.numpy(), atol=1e-5)


def test_sample_mips_trilinear_endpoints():
    cm = prefilter_cubemap(Cubemap.from_function(_smooth, 32))
    mips = [T(m) for m in cm.mips]
    d = T([[0.0, 0.6, 0.8]])
    for k in range(len(mips)):
        r = T([k / (len(mips) - 1)])
        assert torch.allclose(sample_mips_t(mips, d, r), sample_cube_t(mips[k], d))
