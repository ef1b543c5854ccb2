"""Synthetic rendezvous image sequences of a tumbling box-and-panel target.

Ground truth comes from a small ray tracer: Lambertian shading, exact hard
shadows via shadow rays, an ambient floor, black background.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import geom

AMBIENT = 0.05
RAY_EPS = 1e-6


class DegenerateMesh(ValueError):
    pass


@dataclass
class TargetMesh:
    triangles: np.ndarray   # (T, 3, 3)
    albedo: np.ndarray      # (T, 3)

    @property
    def normals(self) -> np.ndarray:
        e1 = self.triangles[:, 1] - self.triangles[:, 0]
        e2 = self.triangles[:, 2] - self.triangles[:, 0]
        n = np.cross(e1, e2)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def areas(self) -> np.ndarray:
        e1 = self.triangles[:, 1] - self.triangles[:, 0]
        e2 = self.triangles[:, 2] - self.triangles[:, 0]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.triangles.reshape(-1, 3), axis=1).max())

    def save(self, path) -> None:
        np.savez(path, triangles=self.triangles, albedo=self.albedo)

    @classmethod
    def load(cls, path) -> "TargetMesh":
        with np.load(path) as z:
            return cls(z["triangles"].astype(np.float64), z["albedo"].astype(np.float64))


def box_mesh(center, size, face_albedo) -> TargetMesh:
    """Axis-aligned box with outward-facing triangles.  ``face_albedo`` maps
    '+x', '-x', ... to RGB."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(size, dtype=np.float64) / 2
    tris, alb = [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            u, v = [a for a in range(3) if a != axis]
            q = []
            for du, dv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = c.copy()
                p[axis] += sign * h[axis]
                p[u] += du * h[u]
                p[v] += dv * h[v]
                q.append(p)
            t1, t2 = np.array([q[0], q[1], q[2]]), np.array([q[0], q[2], q[3]])
            if np.cross(t1[1] - t1[0], t1[2] - t1[0])[axis] * sign < 0:
                t1, t2 = t1[[0, 2, 1]], t2[[0, 2, 1]]
            tris += [t1, t2]
            alb += [face_albedo[("+" if sign > 0 else "-") + "xyz"[axis]]] * 2
    return TargetMesh(np.array(tris), np.array(alb, dtype=np.float64))


def canonical_target() -> TargetMesh:
    """Box bus (1.0×0.6×0.6 m) with a thin solar panel on its +y side."""
    gold = (0.85, 0.65, 0.25)
    body = box_mesh((0, 0, 0), (1.0, 0.6, 0.6), {
        "+x": (0.75, 0.75, 0.78), "-x": (0.6, 0.6, 0.62),
        "+y": gold, "-y": gold, "+z": gold, "-z": (0.7, 0.5, 0.2)})
    cell, back, edge = (0.15, 0.25, 0.7), (0.8, 0.8, 0.8), (0.4, 0.4, 0.4)
    panel = box_mesh((0, 0.75, 0), (2.4, 0.8, 0.02), {
        "+z": cell, "-z": back, "+x": edge, "-x": edge, "+y": edge, "-y": edge})
    return TargetMesh(np.concatenate([body.triangles, panel.triangles]),
                      np.concatenate([body.albedo, panel.albedo]))


# --------------------------------------------------------------------------
# ray casting
# --------------------------------------------------------------------------

def intersect(origins: np.ndarray, dirs: np.ndarray, tris: np.ndarray, tmin=RAY_EPS):
    """Möller–Trumbore against every triangle.  Returns ``(t, tri_index)``
    with ``t = inf`` and index ``-1`` for misses."""
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    pvec = np.cross(dirs[:, None, :], e2[None])                  # (R, T, 3)
    det = np.einsum("tk,rtk->rt", e1, pvec)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - v0[None]
    u = np.einsum("rtk,rtk->rt", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None])
    v = np.einsum("rk,rtk->rt", dirs, qvec) * inv
    t = np.einsum("tk,rtk->rt", e2, qvec) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > tmin)
    t = np.where(hit, t, np.inf)
    idx = np.argmin(t, axis=1)
    tbest = t[np.arange(len(t)), idx]
    idx = np.where(np.isfinite(tbest), idx, -1)
    return tbest, idx


def in_shadow(points: np.ndarray, normals: np.ndarray, sun: np.ndarray,
              mesh: TargetMesh) -> np.ndarray:
    """True where the ray from a surface point toward the sun hits the mesh."""
    origins = points + 1e-5 * normals
    dirs = np.broadcast_to(sun, points.shape)
    t, _ = intersect(origins, np.ascontiguousarray(dirs), mesh.triangles)
    return np.isfinite(t)


def pixel_rays(T: geom.RigidTransform, K: geom.Pinhole):
    """Object-frame origin and unit directions for every pixel center."""
    jj, ii = np.meshgrid(np.arange(K.width), np.arange(K.height))
    d_cam = np.stack([(jj - K.cx) / K.fx, (ii - K.cy) / K.fy,
                      np.ones_like(jj, dtype=np.float64)], axis=-1).reshape(-1, 3)
    d = d_cam @ T.R   # camera -> object rotation is Rᵀ
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return T.center, d


def raytrace_frame(mesh: TargetMesh, T: geom.RigidTransform, K: geom.Pinhole,
                   sun: np.ndarray, chunk: int = 4096):
    """Render ``(rgb float (H, W, 3) quantized to 8 bits, mask bool (H, W))``."""
    sun = np.asarray(sun, dtype=np.float64)
    sun = sun / np.linalg.norm(sun)
    origin, dirs = pixel_rays(T, K)
    rgb = np.zeros((len(dirs), 3))
    mask = np.zeros(len(dirs), dtype=bool)
    normals = mesh.normals
    for s in range(0, len(dirs), chunk):
        d = dirs[s:s + chunk]
        o = np.broadcast_to(origin, d.shape)
        t, idx = intersect(np.ascontiguousarray(o), d, mesh.triangles)
        hit = idx >= 0
        if not hit.any():
            continue
        h = np.flatnonzero(hit)
        p = origin + t[h, None] * d[h]
        n = normals[idx[h]]
        alb = mesh.albedo[idx[h]]
        cos = np.maximum(0.0, n @ sun)
        lit = cos > 0
        shadowed = np.zeros(len(h), dtype=bool)
        if lit.any():
            shadowed[lit] = in_shadow(p[lit], n[lit], sun, mesh)
        direct = np.where(shadowed, 0.0, cos)
        rgb[s + h] = np.clip(alb * direct[:, None] + AMBIENT * alb, 0.0, 1.0)
        mask[s + h] = True
    img = np.round(rgb * 255.0) / 255.0
    return img.reshape(K.height, K.width, 3), mask.reshape(K.height, K.width)


def sample_surface(mesh: TargetMesh, n: int, rng: np.random.Generator):
    """Area-weighted uniform surface samples; returns ``(points, triangle ids)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.areas
    if len(areas) == 0 or not np.isfinite(areas).all() or areas.sum() <= 0:
        raise DegenerateMesh("mesh has no area")
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    b = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
    pts = np.einsum("nk,nkd->nd", b, mesh.triangles[tri])
    return pts, tri


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

@dataclass
class TrajectoryConfig:
    n_frames: int = 360
    n_eval: int = 20
    n_holdout: int = 20
    dt: float = 5.0                         # s between frames
    tumble_rate_deg: float = 2.0            # about object x̂, deg/s
    orbit_period: float = 360.0             # s; five orbits over the default sequence
    amp: tuple = (5.0, 1.5, 5.0)            # A, B, C of the relative orbit, m
    y0: float = 0.0
    sun_inertial: tuple = (0.35, 0.55, 0.76)
    width: int = 128
    height: int = 128
    focal: float = 160.0
    eval_radius: tuple = (4.0, 12.0)
    eval_max_sun_angle_deg: float = 170.0

    @property
    def pinhole(self) -> geom.Pinhole:
        return geom.Pinhole(self.focal, self.focal, self.width / 2, self.height / 2,
                            self.width, self.height)

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown trajectory fields: {sorted(unknown)}")
        for k in ("amp", "sun_inertial", "eval_radius"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)


def tumble(cfg: TrajectoryConfig, t: float) -> np.ndarray:
    """Object-to-inertial rotation quaternion at time ``t``."""
    return geom.axis_angle_quat((1, 0, 0), np.deg2rad(cfg.tumble_rate_deg) * t)


def sun_in_object(cfg: TrajectoryConfig, t: float) -> np.ndarray:
    s = np.asarray(cfg.sun_inertial, dtype=np.float64)
    s = s / np.linalg.norm(s)
    return geom.quat_to_rotmat(tumble(cfg, t)).T @ s


def camera_position(cfg: TrajectoryConfig, t: float) -> np.ndarray:
    w = 2 * np.pi / cfg.orbit_period
    A, B, C = cfg.amp
    return np.array([A * np.cos(w * t), B * np.sin(2 * w * t) + cfg.y0, C * np.sin(w * t)])


def frame_pose(cfg: TrajectoryConfig, t: float) -> geom.RigidTransform:
    """Object-to-camera transform at time ``t``; the camera looks at the origin."""
    T_ic = geom.RigidTransform.look_at(camera_position(cfg, t), up=(0.0, 1.0, 0.0))
    T_oi = geom.RigidTransform(tumble(cfg, t), np.zeros(3))
    return T_ic.compose(T_oi)


def random_pose(rng: np.random.Generator, cfg: TrajectoryConfig):
    """Uniform camera direction, radius and roll plus a uniform sun, rejecting
    near-into-the-sun geometry."""
    while True:
        view = rng.normal(size=3)
        view /= np.linalg.norm(view)
        sun = rng.normal(size=3)
        sun /= np.linalg.norm(sun)
        if np.degrees(np.arccos(np.clip(view @ sun, -1, 1))) <= cfg.eval_max_sun_angle_deg:
            break
    radius = rng.uniform(*cfg.eval_radius)
    up = rng.normal(size=3)
    T = geom.RigidTransform.look_at(radius * view, up=up)
    return T, sun


# --------------------------------------------------------------------------
# dataset io
# --------------------------------------------------------------------------

def _frame_record(fid, T, sun):
    return {"id": int(fid), "image": f"images/{fid:06d}.png", "mask": f"masks/{fid:06d}.png",
            "q_obj2cam": [float(v) for v in T.rotation],
            "t_obj2cam": [float(v) for v in T.translation],
            "sun_obj": [float(v) for v in sun]}


def write_split(out: Path, mesh: TargetMesh, K: geom.Pinhole, poses, meta: dict) -> None:
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    frames = []
    for fid, (T, sun) in enumerate(poses):
        rgb, mask = raytrace_frame(mesh, T, K, sun)
        rec = _frame_record(fid, T, sun)
        Image.fromarray(np.round(rgb * 255).astype(np.uint8)).save(out / rec["image"])
        Image.fromarray(mask.astype(np.uint8) * 255).save(out / rec["mask"])
        frames.append(rec)
    manifest = {"intrinsics": K.to_dict(), **meta, "frames": frames}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def generate_dataset(out_dir, cfg: TrajectoryConfig | None = None, seed: int = 0,
                     mesh: TargetMesh | None = None) -> Path:
    """Write the training sequence, a sequential hold-out and a random-pose split."""
    cfg = cfg or TrajectoryConfig()
    mesh = mesh or canonical_target()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IOError(f"cannot create {out}: {e}") from e
    K = cfg.pinhole
    mesh.save(out / "mesh.npz")
    meta = {"trajectory": asdict(cfg), "seed": seed, "mesh": "mesh.npz",
            "scene_radius": mesh.radius}
    train = [(frame_pose(cfg, k * cfg.dt), sun_in_object(cfg, k * cfg.dt))
             for k in range(cfg.n_frames)]
    write_split(out, mesh, K, train, {**meta, "split": "train"})
    # sequential hold-out: half-step offsets spread over the sequence
    step = max(1, cfg.n_frames // max(cfg.n_holdout, 1))
    hold = [(frame_pose(cfg, (k * step + 0.5) * cfg.dt), sun_in_object(cfg, (k * step + 0.5) * cfg.dt))
            for k in range(cfg.n_holdout)]
    write_split(out / "holdout", mesh, K, hold, {**meta, "split": "holdout"})
    rng = np.random.default_rng(seed)
    rand = [random_pose(rng, cfg) for _ in range(cfg.n_eval)]
    write_split(out / "eval", mesh, K, rand, {**meta, "split": "random-pose"})
    return out


@dataclass
class FrameRecord:
    frame_id: int
    pose: geom.RigidTransform
    sun: np.ndarray
    K: geom.Pinhole
    image: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)


def load_split(path) -> tuple[list[FrameRecord], dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    K = geom.Pinhole(**manifest["intrinsics"])
    frames = []
    for rec in manifest["frames"]:
        img = np.asarray(Image.open(path / rec["image"]), dtype=np.float64) / 255.0
        mask = np.asarray(Image.open(path / rec["mask"])) >= 128
        T = geom.RigidTransform(np.array(rec["q_obj2cam"]), np.array(rec["t_obj2cam"]))
        frames.append(FrameRecord(rec["id"], T, np.array(rec["sun_obj"]), K, img, mask))
    return frames, manifest


def split_dir(dataset, split: str) -> Path:
    dataset = Path(dataset)
    return {"train": dataset, "train-window": dataset, "holdout": dataset / "holdout",
            "random-pose": dataset / "eval"}[split]


def dataset_digest(path) -> str:
    """SHA-256 over every file of a dataset directory (sorted, relative paths)."""
    import hashlib
    h = hashlib.sha256()
    root = Path(path)
    for dirpath, _, files in sorted(os.walk(root)):
        for f in sorted(files):
            p = Path(dirpath) / f
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
