"""Quaternions, pinhole projection and the splatted-covariance chain.

Every map used by the renderer comes with its analytic reverse-mode
counterpart (``*_backward``).  Functions are batched over a leading axis
where that is natural; single instances work by passing shape ``(4,)``,
``(3,)`` etc.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Z_NEAR = 1e-4
SPLAT_DILATION = 0.3
DET_EPS = 1e-12


class BehindCamera(ValueError):
    pass


class Degenerate(ValueError):
    pass


# --------------------------------------------------------------------------
# Quaternions (w, x, y, z), Hamilton convention
# --------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _unit_quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion.  The input is renormalized first."""
    return _unit_quat_to_rotmat(quat_normalize(q))


def quat_to_rotmat_backward(q: np.ndarray, grad_R: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the *raw* (unnormalized) quaternion."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / norm
    w, x, y, z = np.moveaxis(u, -1, 0)
    g = grad_R
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    gw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    gx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12
              + z * g20 + w * g21 - 2 * x * g22)
    gy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12
              - w * g20 + z * g21 - 2 * y * g22)
    gz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11
              + y * g12 + x * g20 + y * g21)
    gu = np.stack([gw, gx, gy, gz], axis=-1)
    # through u = q / |q|
    return (gu - u * np.sum(gu * u, axis=-1, keepdims=True)) / norm


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_rotmat` for a single matrix (w >= 0)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
             (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
             (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
             (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(np.array(q))
    return q if q[0] >= 0 else -q


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


# --------------------------------------------------------------------------
# Camera types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Pinhole:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                    width=self.width, height=self.height)


@dataclass(frozen=True)
class RigidTransform:
    """Maps object-frame points into the camera frame: ``p_c = R p_o + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)

    def apply(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.R.T + self.translation

    def inverse(self) -> "RigidTransform":
        qi = quat_conj(self.rotation)
        return RigidTransform(qi, -quat_to_rotmat(qi) @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(quat_mul(self.rotation, other.rotation),
                              self.R @ other.translation + self.translation)

    @property
    def center(self) -> np.ndarray:
        """Camera center expressed in the object frame."""
        return -self.R.T @ self.translation

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> "RigidTransform":
        """Camera at ``eye`` (object frame) looking at ``target``.

        Camera axes follow the x-right, y-down, z-forward convention.
        """
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            up = orthogonal_axis(fwd)
            right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(rotmat_to_quat(R), -R @ eye)


def orthogonal_axis(v: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to ``v`` built from its smallest-magnitude axis."""
    v = np.asarray(v, dtype=np.float64)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(v)))] = 1.0
    u = e - v * (v @ e) / (v @ v)
    return u / np.linalg.norm(u)


# --------------------------------------------------------------------------
# Covariance and projection
# --------------------------------------------------------------------------

def build_covariance(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``R S Sᵀ Rᵀ`` for quaternion ``q`` and positive scales ``s``."""
    M = quat_to_rotmat(q) * np.asarray(s, dtype=np.float64)[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def build_covariance_backward(q, s, grad_cov):
    """Returns (grad_q_raw, grad_s) given a symmetric full-matrix gradient."""
    R = quat_to_rotmat(q)
    s = np.asarray(s, dtype=np.float64)
    M = R * s[..., None, :]
    gsym = grad_cov + np.swapaxes(grad_cov, -1, -2)
    grad_M = gsym @ M
    grad_s = np.sum(grad_M * R, axis=-2)
    grad_R = grad_M * s[..., None, :]
    return quat_to_rotmat_backward(q, grad_R), grad_s


def project_point(p_obj, T: RigidTransform, K: Pinhole):
    p = T.apply(p_obj)
    if p[2] <= Z_NEAR:
        raise BehindCamera(f"depth {p[2]:.3g} <= z_near")
    return (K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy, p[2])


def project_points(p_cam: np.ndarray, K: Pinhole) -> np.ndarray:
    """Batched pinhole projection of camera-frame points, no culling."""
    z = p_cam[..., 2]
    return np.stack([K.fx * p_cam[..., 0] / z + K.cx,
                     K.fy * p_cam[..., 1] / z + K.cy], axis=-1)


def projection_jacobian(p_cam: np.ndarray, K: Pinhole) -> np.ndarray:
    p_cam = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    if np.any(z <= Z_NEAR):
        raise BehindCamera("point behind the near plane")
    J = np.zeros(p_cam.shape[:-1] + (2, 3))
    J[..., 0, 0] = K.fx / z
    J[..., 0, 2] = -K.fx * x / z**2
    J[..., 1, 1] = K.fy / z
    J[..., 1, 2] = -K.fy * y / z**2
    return J


def projection_jacobian_backward(p_cam, K: Pinhole, grad_J):
    """Gradient w.r.t. the camera-frame point of a scalar through ``J``."""
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    g = grad_J
    gx = -K.fx / z**2 * g[..., 0, 2]
    gy = -K.fy / z**2 * g[..., 1, 2]
    gz = (-K.fx / z**2 * g[..., 0, 0] + 2 * K.fx * x / z**3 * g[..., 0, 2]
          - K.fy / z**2 * g[..., 1, 1] + 2 * K.fy * y / z**3 * g[..., 1, 2])
    return np.stack([gx, gy, gz], axis=-1)


def splat_covariance(cov3: np.ndarray, W_rot: np.ndarray, J: np.ndarray,
                     check: bool = True) -> np.ndarray:
    """2D screen covariance ``J W Σ Wᵀ Jᵀ`` plus the anti-aliasing dilation."""
    M = J @ W_rot
    cov2 = M @ cov3 @ np.swapaxes(M, -1, -2)
    cov2 = cov2 + SPLAT_DILATION * np.eye(2)
    if check:
        det = cov2[..., 0, 0] * cov2[..., 1, 1] - cov2[..., 0, 1] ** 2
        if np.any(det <= DET_EPS):
            raise Degenerate("splatted covariance is singular")
    return cov2


def splat_covariance_backward(cov3, W_rot, J, grad_cov2):
    """Returns (grad_cov3, grad_J) as full-matrix gradients."""
    M = J @ W_rot
    g = 0.5 * (grad_cov2 + np.swapaxes(grad_cov2, -1, -2))
    Mt = np.swapaxes(M, -1, -2)
    grad_cov3 = Mt @ g @ M
    grad_M = 2.0 * g @ M @ cov3
    grad_J = grad_M @ np.swapaxes(W_rot, -1, -2)
    return grad_cov3, grad_J


def inverse_2x2(cov2: np.ndarray):
    """Returns ``(conic, det)`` with conic packed as ``(a, b, c)`` of [[a,b],[b,c]]."""
    a, b, c = cov2[..., 0, 0], cov2[..., 0, 1], cov2[..., 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=-1)
    return conic, det


def inverse_2x2_backward(conic: np.ndarray, grad_conic: np.ndarray) -> np.ndarray:
    """Full-matrix gradient w.r.t. the covariance from packed conic gradients.

    ``grad_conic[..., 1]`` is the derivative w.r.t. the shared off-diagonal
    entry ``b`` (which appears twice in the matrix).
    """
    inv = np.empty(conic.shape[:-1] + (2, 2))
    inv[..., 0, 0] = conic[..., 0]
    inv[..., 0, 1] = inv[..., 1, 0] = conic[..., 1]
    inv[..., 1, 1] = conic[..., 2]
    G = np.empty_like(inv)
    G[..., 0, 0] = grad_conic[..., 0]
    G[..., 0, 1] = G[..., 1, 0] = 0.5 * grad_conic[..., 1]
    G[..., 1, 1] = grad_conic[..., 2]
    return -inv @ G @ inv
