import numpy as np
import pytest

from hybridsplat.errors import InputError, SceneParseError
from hybridsplat.scene import (FIELD_BOUNDS, SPLAT_FIELDS, Camera, Scene, Splats, init_synthetic, load_cameras,
                               quat_from_z_to, quat_to_rotmat, save_cameras, scene_load, scene_save)


def random_splats(n, seed=0):
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, w, lo, hi in SPLAT_FIELDS:
        if lo is not None and hi is not None:
            a = rng.uniform(lo, hi, (n, w))
        elif lo is not None:
            a = rng.uniform(lo, lo + 3.0, (n, w))
        else:
            a = rng.normal(size=(n, w))
        arrays[name] = a
    q = arrays["rotation"]
    arrays["rotation"] = q / np.linalg.norm(q, axis=1, keepdims=True)
    return Splats(**arrays)


def test_empty_scene_round_trip(tmp_path):
    s = Scene.empty(face_res=4)
    scene_save(s, tmp_path / "e")
    back = scene_load(tmp_path / "e")
    assert len(back.splats) == 0
    assert np.array_equal(back.env_map.faces, s.env_map.faces)
    assert np.array_equal(back.decoder.w2, s.decoder.w2)
    assert back.visibility is None


def test_random_scene_round_trip_exact(tmp_path):
    s = Scene.empty(face_res=4, seed=7)
    s.splats = random_splats(100, seed=1)
    s.env_map.faces[...] = np.random.default_rng(2).uniform(0, 5, s.env_map.faces.shape)
    scene_save(s, tmp_path / "r")
    back = scene_load(tmp_path / "r")
    for name, _, _, _ in SPLAT_FIELDS:
        assert np.array_equal(getattr(back.splats, name), getattr(s.splats, name)), name
    assert np.array_equal(back.sh_light.coeffs, s.sh_light.coeffs)
    assert np.array_equal(back.env_map.faces, s.env_map.faces)
    assert np.array_equal(back.reflection_map.faces, s.reflection_map.faces)


def _write_one_splat(tmp_path, **override):
    s = Scene.empty(face_res=4)
    s.splats = random_splats(1, seed=3)
    for k, v in override.items():
        getattr(s.splats, k)[...] = v
    return scene_save(s, tmp_path / "one")


def test_out_of_range_field_rejected(tmp_path):
    _write_one_splat(tmp_path, R_i=1.5)
    with pytest.raises(SceneParseError) as e:
        scene_load(tmp_path / "one")
    assert e.value.field == "R_i"
    assert "field out of range" in str(e.value)
    assert e.value.line is not None


def test_negative_rho_d_rejected(tmp_path):
    _write_one_splat(tmp_path, rho_d=-0.1)
    with pytest.raises(SceneParseError, match="out of range"):
        scene_load(tmp_path / "one")


def test_non_unit_quaternion_rejected(tmp_path):
    _write_one_splat(tmp_path, rotation=[1.0, 1.0, 0.0, 0.0])
    with pytest.raises(SceneParseError, match="unit quaternion"):
        scene_load(tmp_path / "one")


def test_parse_error_reports_line(tmp_path):
    sf = _write_one_splat(tmp_path)
    lines = sf.read_text().splitlines()
    k = next(i for i, t in enumerate(lines) if t.startswith("s "))
    lines[k] = lines[k] + " oops"
    sf.write_text("\n".join(lines) + "\n")
    with pytest.raises(SceneParseError) as e:
        scene_load(tmp_path / "one")
    assert e.value.line == k + 1
    assert f"line {k + 1}" in str(e.value)


def test_truncated_file(tmp_path):
    sf = _write_one_splat(tmp_path)
    sf.write_text("\n".join(sf.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(SceneParseError, match="unexpected end"):
        scene_load(tmp_path / "one")


def test_wrong_version(tmp_path):
    sf = _write_one_splat(tmp_path)
    sf.write_text(sf.read_text().replace("rtrscene 1", "rtrscene 9", 1))
    with pytest.raises(SceneParseError, match="unsupported version"):
        scene_load(tmp_path / "one")


def test_missing_face(tmp_path):
    _write_one_splat(tmp_path)
    (tmp_path / "one" / "env_map").iterdir().__next__().unlink()
    with pytest.raises(SceneParseError, match="missing cubemap face"):
        scene_load(tmp_path / "one")


def test_missing_scene(tmp_path):
    with pytest.raises(SceneParseError, match="not found"):
        scene_load(tmp_path / "nope")


def test_init_sphere_bounds_and_defaults():
    s = init_synthetic(dict(count=500, size=0.8, seed=0, face_res=4))
    r = np.linalg.norm(s.splats.position, axis=1)
    assert len(s.splats) == 500
    assert np.allclose(r, 0.8, atol=1e-12)
    assert np.all(s.splats.R_i == 0.01)
    for name, (lo, hi) in FIELD_BOUNDS.items():
        v = getattr(s.splats, name)
        assert lo is None or v.min() >= lo
        assert hi is None or v.max() <= hi


def test_init_sphere_normals_point_outward():
    s = init_synthetic(dict(count=100, flatten=0.1, seed=0, face_res=4))
    z = quat_to_rotmat(s.splats.rotation)[:, :, 2]
    n = s.splats.position / np.linalg.norm(s.splats.position, axis=1, keepdims=True)
    assert np.allclose((z * n).sum(1), 1.0, atol=1e-9)


def test_init_deterministic():
    a = init_synthetic(dict(primitive="box", count=300, seed=5, position_jitter=0.01, face_res=4))
    b = init_synthetic(dict(primitive="box", count=300, seed=5, position_jitter=0.01, face_res=4))
    c = init_synthetic(dict(primitive="box", count=300, seed=6, position_jitter=0.01, face_res=4))
    assert np.array_equal(a.splats.matrix(), b.splats.matrix())
    assert not np.array_equal(a.splats.matrix(), c.splats.matrix())


def test_init_plane_and_box_extent():
    p = init_synthetic(dict(primitive="plane", count=64, size=2.0, face_res=4))
    assert np.all(p.splats.position[:, 2] == 0.0)
    assert np.abs(p.splats.position[:, :2]).max() <= 2.0
    b = init_synthetic(dict(primitive="box", count=600, size=0.5, face_res=4))
    assert np.allclose(np.abs(b.splats.position).max(1), 0.5)


def test_init_unknown_primitive():
    with pytest.raises(InputError, match="unknown primitive"):
        init_synthetic(dict(primitive="torus", face_res=4))


def test_covariance_eigenvalues():
    s = init_synthetic(dict(count=20, scale=0.1, flatten=0.2, seed=1, face_res=4))
    ev = np.linalg.eigvalsh(s.splats.covariances())
    assert np.allclose(ev[:, 0], 0.02 ** 2)
    assert np.allclose(ev[:, 1:], 0.1 ** 2)
    one = s.splats[3]
    assert np.allclose(one.covariance(), s.splats.covariances()[3])


def test_quat_from_z_to_antipodal():
    n = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    z = quat_to_rotmat(quat_from_z_to(n))[:, :, 2]
    assert np.allclose(z, n, atol=1e-12)


def test_splats_row_mismatch():
    arrays = random_splats(3).as_dict()
    arrays["albedo"] = arrays["albedo"][:2]
    with pytest.raises(InputError, match="rows"):
        Splats(**arrays)


def test_clamp_restores_bounds():
    s = random_splats(10)
    s.albedo += 2.0
    s.rotation *= 3.0
    s.clamp_()
    assert s.albedo.max() <= 1.0
    assert np.allclose(np.linalg.norm(s.rotation, axis=1), 1.0)


def test_cameras_round_trip(tmp_path):
    cams = [Camera.look_at((0, -3, 1), (0, 0, 0), width=32, height=24), Camera.look_at((2, 2, 2), (0, 0, 0.1))]
    save_cameras(tmp_path / "c.txt", cams)
    back = load_cameras(tmp_path / "c.txt")
    for a, b in zip(cams, back):
        assert np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t)
        assert (a.fx, a.cx, a.width, a.height) == (b.fx, b.cx, b.width, b.height)


def test_camera_bad_line(tmp_path):
    (tmp_path / "c.txt").write_text("# header\ncamera 1 2 3\n")
    with pytest.raises(SceneParseError) as e:
        load_cameras(tmp_path / "c.txt")
    assert e.value.line == 2


def test_look_at_centers_target():
    cam = Camera.look_at((1.0, -2.0, 0.5), (0.2, 0.1, 0.0), width=40, height=40)
    assert np.allclose(cam.center, [1.0, -2.0, 0.5])
    pc = cam.R @ np.array([0.2, 0.1, 0.0]) + cam.t
    assert abs(pc[0]) < 1e-12 and abs(pc[1]) < 1e-12 and pc[2] > 0


def test_camera_rejects_bad_rotation():
    with pytest.raises(InputError):
        Camera(10, 10, 5, 5, 10, 10, np.diag([1.0, 2.0, 1.0]))
