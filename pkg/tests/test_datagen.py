import json

import numpy as np
import pytest
from oracles import segment_hits_mesh

from sunsplat import datagen, geom
from sunsplat.datagen import AMBIENT, TargetMesh, TrajectoryConfig


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="module")
def mesh():
    return datagen.canonical_target()


def test_canonical_mesh_invariants(mesh):
    assert len(mesh.triangles) == 24
    assert np.all((mesh.albedo >= 0) & (mesh.albedo <= 1))
    # each box: normals point away from its center; closed surface (every edge used twice)
    for box, center in ((slice(0, 12), np.zeros(3)), (slice(12, 24), np.array([0, 0.75, 0]))):
        tris = mesh.triangles[box]
        centroids = tris.mean(axis=1)
        assert np.all(np.einsum("ij,ij->i", mesh.normals[box], centroids - center) > 0)
        edges = {}
        for t in np.round(tris, 9):
            for i in range(3):
                e = tuple(sorted((tuple(t[i]), tuple(t[(i + 1) % 3]))))
                edges[e] = edges.get(e, 0) + 1
        assert set(edges.values()) == {2}
    assert mesh.areas[:12].sum() == pytest.approx(2 * (0.6 + 0.6 + 0.36))


def test_shadow_test_is_exact_on_random_surface_points(mesh):
    rng = np.random.default_rng(0)
    pts, tri = datagen.sample_surface(mesh, 1000, rng)
    normals = mesh.normals[tri]
    suns = rng.normal(size=(1000, 3))
    suns /= np.linalg.norm(suns, axis=1, keepdims=True)
    violations = 0
    for p, n, s in zip(pts, normals, suns):
        fast = datagen.in_shadow(p[None], n[None], s, mesh)[0]
        violations += fast != segment_hits_mesh(p + 1e-5 * n, s, mesh.triangles)
    assert violations == 0


def test_front_lit_face_is_albedo_plus_ambient(mesh):
    # camera and sun both on +x, looking at the +x face of the body
    T = geom.RigidTransform.look_at([4.0, 0, 0], up=(0, 1, 0))
    K = geom.Pinhole(200, 200, 16, 16, 32, 32)
    rgb, mask = datagen.raytrace_frame(mesh, T, K, np.array([1.0, 0, 0]))
    expected = np.round(np.clip(1.05 * np.array([0.75, 0.75, 0.78]), 0, 1) * 255) / 255
    assert mask[16, 16]
    assert np.allclose(rgb[16, 16], expected)


def test_backlit_face_is_ambient_only(mesh):
    T = geom.RigidTransform.look_at([4.0, 0, 0], up=(0, 1, 0))
    K = geom.Pinhole(200, 200, 16, 16, 32, 32)
    rgb, _ = datagen.raytrace_frame(mesh, T, K, np.array([-1.0, 0, 0]))
    assert np.allclose(rgb[16, 16], np.round(AMBIENT * np.array([0.75, 0.75, 0.78]) * 255) / 255)


def test_panel_casts_shadow_on_body_top(mesh):
    """Sun from +y/−z: the panel (y ≥ 0.35, z ≈ 0) shades the body's +y face
    wherever z > 0.05 and leaves it lit for z < 0.05."""
    sun = unit([0, 1, -1])
    T = geom.RigidTransform.look_at([0.0, 4.0, 1.5], target=(0, 0.3, 0), up=(1, 0, 0))
    K = geom.Pinhole(300, 300, 32, 32, 64, 64)
    rgb, mask = datagen.raytrace_frame(mesh, T, K, sun)
    origin, dirs = datagen.pixel_rays(T, K)
    t, idx = datagen.intersect(np.broadcast_to(origin, dirs.shape).copy(), dirs, mesh.triangles)
    top = np.flatnonzero(np.isin(idx, [4, 5]))     # the body's +y face
    assert len(top) > 50
    gold = np.array([0.85, 0.65, 0.25])
    ambient = np.round(AMBIENT * gold * 255) / 255
    pix = rgb.reshape(-1, 3)
    n_shadow = n_lit = 0
    for k in top:
        p = origin + t[k] * dirs[k]
        shadowed = segment_hits_mesh(p + 1e-5 * np.array([0, 1.0, 0]), sun, mesh.triangles)
        assert shadowed == (p[2] > 0.05 + 1e-6) or abs(p[2] - 0.05) < 0.02
        if shadowed:
            n_shadow += 1
            assert np.allclose(pix[k], ambient)
        else:
            n_lit += 1
            assert np.all(pix[k] > ambient + 0.1)
    assert n_shadow > 10 and n_lit > 10


def test_single_triangle_sampling():
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], dtype=float)
    m = TargetMesh(tri, np.ones((1, 3)))
    pts, ids = datagen.sample_surface(m, 500, np.random.default_rng(0))
    assert pts.shape == (500, 3) and np.all(ids == 0)
    assert np.all(pts[:, 0] >= 0) and np.all(pts[:, 1] >= 0) and np.all(pts.sum(1) <= 1 + 1e-12)
    assert np.allclose(pts[:, 2], 0)


def test_area_weighted_sampling_ratio():
    small = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
    big = [[0, 0, 1], [3, 0, 1], [0, 1, 1]]
    m = TargetMesh(np.array([small, big], dtype=float), np.ones((2, 3)))
    n = 40000
    _, ids = datagen.sample_surface(m, n, np.random.default_rng(1))
    k = np.sum(ids == 0)
    mean, sd = n / 4, np.sqrt(n * 0.25 * 0.75)
    assert abs(k - mean) < 3 * sd


def test_degenerate_mesh_rejected():
    flat = TargetMesh(np.zeros((2, 3, 3)), np.ones((2, 3)))
    with pytest.raises(datagen.DegenerateMesh):
        datagen.sample_surface(flat, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        datagen.sample_surface(datagen.canonical_target(), 0, np.random.default_rng(0))


def test_tumble_is_ten_degrees_per_frame_about_x():
    cfg = TrajectoryConfig()
    for k in (0, 7, 100):
        q0 = datagen.tumble(cfg, k * cfg.dt)
        q1 = datagen.tumble(cfg, (k + 1) * cfg.dt)
        rel = geom.quat_mul(q1, geom.quat_conj(q0))
        assert np.degrees(2 * np.arccos(min(1.0, abs(rel[0])))) == pytest.approx(10.0)
        assert np.allclose(np.abs(unit(rel[1:])), [1, 0, 0])


def test_camera_stays_outside_target():
    cfg = TrajectoryConfig()
    r = datagen.canonical_target().radius
    ts = np.arange(cfg.n_frames) * cfg.dt
    assert min(np.linalg.norm(datagen.camera_position(cfg, t)) for t in ts) > r


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    cfg = TrajectoryConfig(n_frames=10, n_eval=4, n_holdout=3, width=32, height=32, focal=40)
    out = tmp_path_factory.mktemp("ds")
    datagen.generate_dataset(out, cfg, seed=3)
    return out, cfg


def test_layout_and_manifest(small_dataset):
    out, cfg = small_dataset
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["frames"]) == 10
    assert set(man["intrinsics"]) == {"fx", "fy", "cx", "cy", "width", "height"}
    for rec in man["frames"]:
        assert (out / rec["image"]).is_file() and (out / rec["mask"]).is_file()
        assert np.linalg.norm(rec["q_obj2cam"]) == pytest.approx(1.0)
        assert np.linalg.norm(rec["sun_obj"]) == pytest.approx(1.0)
    assert len(json.loads((out / "eval" / "manifest.json").read_text())["frames"]) == 4
    assert len(json.loads((out / "holdout" / "manifest.json").read_text())["frames"]) == 3


def test_sun_vector_frame_identity(small_dataset):
    out, cfg = small_dataset
    frames, _ = datagen.load_split(out)
    s = unit(cfg.sun_inertial)
    for f in frames:
        t = f.frame_id * cfg.dt
        R_tumble = geom.quat_to_rotmat(datagen.tumble(cfg, t))
        assert np.allclose(f.sun, R_tumble.T @ s, atol=1e-12)
        # the same sun seen from the camera, via the inertial frame
        R_cam = geom.RigidTransform.look_at(datagen.camera_position(cfg, t), up=(0, 1, 0)).R
        assert np.allclose(f.pose.R @ f.sun, R_cam @ s, atol=1e-9)


def test_masks_consistent_with_images(small_dataset):
    out, _ = small_dataset
    for split in ("train", "holdout", "random-pose"):
        frames, _ = datagen.load_split(datagen.split_dir(out, split))
        for f in frames:
            assert not np.any(f.image[~f.mask])
            assert np.all(f.image[f.mask].max(axis=1) > 0)


def test_regeneration_is_byte_identical(small_dataset, tmp_path):
    out, cfg = small_dataset
    datagen.generate_dataset(tmp_path, cfg, seed=3)
    assert datagen.dataset_digest(tmp_path) == datagen.dataset_digest(out)


def test_eval_split_respects_sun_angle_limit(small_dataset):
    out, cfg = small_dataset
    frames, _ = datagen.load_split(out / "eval")
    for f in frames:
        view = unit(f.pose.center)
        r = np.linalg.norm(f.pose.center)
        assert cfg.eval_radius[0] <= r <= cfg.eval_radius[1]
        assert np.degrees(np.arccos(np.clip(view @ f.sun, -1, 1))) <= cfg.eval_max_sun_angle_deg


def test_unknown_trajectory_field_rejected():
    with pytest.raises(ValueError):
        TrajectoryConfig.from_dict({"n_frame": 3})
