"""Tile-based front-to-back alpha compositing of splatted Gaussians.

The forward pass keeps only the per-pixel final transmittance and the index
of the last contributor; the backward pass re-walks each pixel's list from
back to front, recovering intermediate transmittances by division.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from . import geom

TILE = 16
ALPHA_MAX = 0.99
T_MIN = 1e-4
WEIGHT_MIN = 1.0 / 255.0
# footprint radius beyond which every weight is below WEIGHT_MIN, so tile
# culling never drops a contribution the per-pixel rule would keep
RADIUS_SIGMAS = float(np.sqrt(2.0 * np.log(255.0)))


@dataclass
class SplatFrame:
    """Visible Gaussians of one view, sorted front to back.

    ``ids`` index into the source cloud; all other per-Gaussian arrays are
    aligned with ``ids``.
    """

    ids: np.ndarray         # (n,) int64
    means2d: np.ndarray     # (n, 2) px
    conics: np.ndarray      # (n, 3) packed inverse covariance (a, b, c)
    depths: np.ndarray      # (n,)
    radii: np.ndarray       # (n,) px, ~3.33 sigma of the major axis
    width: int
    height: int
    # kept for the backward pass through projection
    p_cam: np.ndarray | None = None
    cov2d: np.ndarray | None = None
    J: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    @property
    def tiles(self) -> tuple[np.ndarray, np.ndarray]:
        if not hasattr(self, "_tiles"):
            self._tiles = bin_tiles(self.means2d, self.radii, self.width, self.height)
        return self._tiles


@dataclass
class RenderOutput:
    color: np.ndarray                # (H, W, P)
    final_transmittance: np.ndarray  # (H, W)
    last: np.ndarray                 # (H, W) exclusive end index into the tile list
    n_contrib: np.ndarray            # (H, W)
    frame: SplatFrame
    opacity: np.ndarray
    payload: np.ndarray
    background: np.ndarray


def eval_gaussian_2d(inv_cov: np.ndarray, d: np.ndarray) -> float:
    """Unnormalized 2D Gaussian weight ``exp(-½ dᵀ Σ⁻¹ d)``."""
    d = np.asarray(d, dtype=np.float64)
    return float(np.exp(-0.5 * d @ np.asarray(inv_cov) @ d))


# --------------------------------------------------------------------------
# culling / sorting
# --------------------------------------------------------------------------

def cull_and_sort(means: np.ndarray, cov3: np.ndarray, T: geom.RigidTransform,
                  K: geom.Pinhole, frustum: bool = True) -> SplatFrame:
    """Project, drop Gaussians behind the near plane or with degenerate
    footprints, and sort the rest by camera depth (stable in index).

    With ``frustum`` set, Gaussians whose footprint misses the image entirely
    are dropped as well.
    """
    R = T.R
    p_cam = means @ R.T + T.translation
    keep = np.flatnonzero(p_cam[:, 2] > geom.Z_NEAR)
    p = p_cam[keep]
    J = geom.projection_jacobian(p, K)
    cov2 = geom.splat_covariance(cov3[keep], R, J, check=False)
    conic, det = geom.inverse_2x2(cov2)
    ok = det > geom.DET_EPS
    radii = footprint_radius(cov2)
    m2 = geom.project_points(p, K)
    if frustum:
        ok &= (m2[:, 0] + radii >= 0) & (m2[:, 0] - radii <= K.width - 1)
        ok &= (m2[:, 1] + radii >= 0) & (m2[:, 1] - radii <= K.height - 1)
    order = np.flatnonzero(ok)
    order = order[np.argsort(p[order, 2], kind="stable")]
    return SplatFrame(ids=keep[order], means2d=m2[order], conics=conic[order],
                      depths=p[order, 2], radii=radii[order], width=K.width,
                      height=K.height, p_cam=p[order], cov2d=cov2[order],
                      J=J[order])


def footprint_radius(cov2: np.ndarray) -> np.ndarray:
    """Pixel radius covering every weight >= 1/255 of each 2D covariance."""
    det = cov2[..., 0, 0] * cov2[..., 1, 1] - cov2[..., 0, 1] ** 2
    mid = 0.5 * (cov2[..., 0, 0] + cov2[..., 1, 1])
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    return np.ceil(RADIUS_SIGMAS * np.sqrt(np.maximum(lam, 0.0)))


def frame_from_2d(means2d: np.ndarray, cov2d: np.ndarray, width: int, height: int) -> SplatFrame:
    """Screen-space frame from already-projected Gaussians listed front to back."""
    means2d = np.asarray(means2d, dtype=np.float64).reshape(-1, 2)
    cov2d = np.asarray(cov2d, dtype=np.float64).reshape(-1, 2, 2)
    conic, _ = geom.inverse_2x2(cov2d)
    n = len(means2d)
    return SplatFrame(ids=np.arange(n), means2d=means2d, conics=conic,
                      depths=np.arange(n, dtype=np.float64), radii=footprint_radius(cov2d),
                      width=width, height=height, cov2d=cov2d)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

@nb.njit(cache=True)
def _bin_tiles(means2d, radii, width, height, tile):
    tx = (width + tile - 1) // tile
    ty = (height + tile - 1) // tile
    n = means2d.shape[0]
    rect = np.empty((n, 4), np.int64)
    counts = np.zeros(tx * ty + 1, np.int64)
    for i in range(n):
        r = radii[i]
        x0 = max(0, int(np.floor((means2d[i, 0] - r) / tile)))
        x1 = min(tx, int(np.floor((means2d[i, 0] + r) / tile)) + 1)
        y0 = max(0, int(np.floor((means2d[i, 1] - r) / tile)))
        y1 = min(ty, int(np.floor((means2d[i, 1] + r) / tile)) + 1)
        rect[i, 0] = x0
        rect[i, 1] = x1
        rect[i, 2] = y0
        rect[i, 3] = y1
        for y in range(y0, y1):
            for x in range(x0, x1):
                counts[y * tx + x + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    lst = np.empty(offsets[-1], np.int64)
    for i in range(n):
        for y in range(rect[i, 2], rect[i, 3]):
            for x in range(rect[i, 0], rect[i, 1]):
                t = y * tx + x
                lst[fill[t]] = i
                fill[t] += 1
    return offsets, lst


def bin_tiles(means2d, radii, width, height, tile=TILE):
    """Per-tile Gaussian lists in depth order: ``(offsets, list)``."""
    return _bin_tiles(np.ascontiguousarray(means2d, dtype=np.float64),
                      np.ascontiguousarray(radii, dtype=np.float64),
                      width, height, tile)


@nb.njit(cache=True, parallel=True)
def _forward(means2d, conics, opac, payload, bg, offsets, lst, width, height, tile):
    P = payload.shape[1]
    tx = (width + tile - 1) // tile
    ty = (height + tile - 1) // tile
    out = np.zeros((height, width, P))
    Tfin = np.ones((height, width))
    last = np.zeros((height, width), np.int64)
    count = np.zeros((height, width), np.int64)
    for t in nb.prange(tx * ty):
        tyi = t // tx
        txi = t - tyi * tx
        start = offsets[t]
        end = offsets[t + 1]
        acc = np.empty(P)
        for py in range(tyi * tile, min(height, (tyi + 1) * tile)):
            for px in range(txi * tile, min(width, (txi + 1) * tile)):
                T = 1.0
                acc[:] = 0.0
                lastk = start
                cnt = 0
                for k in range(start, end):
                    g = lst[k]
                    dx = means2d[g, 0] - px
                    dy = means2d[g, 1] - py
                    power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) \
                        - conics[g, 1] * dx * dy
                    w = np.exp(power)
                    if w < WEIGHT_MIN:
                        continue
                    alpha = min(ALPHA_MAX, opac[g] * w)
                    test_T = T * (1.0 - alpha)
                    if test_T < T_MIN:
                        break
                    for c in range(P):
                        acc[c] += payload[g, c] * alpha * T
                    T = test_T
                    lastk = k + 1
                    cnt += 1
                for c in range(P):
                    out[py, px, c] = acc[c] + T * bg[c]
                Tfin[py, px] = T
                last[py, px] = lastk
                count[py, px] = cnt
    return out, Tfin, last, count


@nb.njit(cache=True)
def _backward(means2d, conics, opac, payload, bg, offsets, lst, width, height, tile,
              Tfin, last, grad_out):
    n = means2d.shape[0]
    P = payload.shape[1]
    tx = (width + tile - 1) // tile
    ty = (height + tile - 1) // tile
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_pay = np.zeros((n, P))
    A = np.empty(P)
    for t in range(tx * ty):
        tyi = t // tx
        txi = t - tyi * tx
        start = offsets[t]
        for py in range(tyi * tile, min(height, (tyi + 1) * tile)):
            for px in range(txi * tile, min(width, (txi + 1) * tile)):
                T = Tfin[py, px]
                for c in range(P):
                    A[c] = bg[c]
                for k in range(last[py, px] - 1, start - 1, -1):
                    g = lst[k]
                    dx = means2d[g, 0] - px
                    dy = means2d[g, 1] - py
                    power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) \
                        - conics[g, 1] * dx * dy
                    w = np.exp(power)
                    if w < WEIGHT_MIN:
                        continue
                    raw = opac[g] * w
                    alpha = min(ALPHA_MAX, raw)
                    Ti = T / (1.0 - alpha)
                    dL_dalpha = 0.0
                    for c in range(P):
                        go = grad_out[py, px, c]
                        dL_dalpha += (payload[g, c] - A[c]) * go
                        g_pay[g, c] += alpha * Ti * go
                        A[c] = payload[g, c] * alpha + (1.0 - alpha) * A[c]
                    dL_dalpha *= Ti
                    T = Ti
                    if raw >= ALPHA_MAX:
                        continue
                    g_opac[g] += dL_dalpha * w
                    dL_dpower = dL_dalpha * opac[g] * w
                    g_mean[g, 0] += -dL_dpower * (conics[g, 0] * dx + conics[g, 1] * dy)
                    g_mean[g, 1] += -dL_dpower * (conics[g, 1] * dx + conics[g, 2] * dy)
                    g_conic[g, 0] += -0.5 * dL_dpower * dx * dx
                    g_conic[g, 1] += -dL_dpower * dx * dy
                    g_conic[g, 2] += -0.5 * dL_dpower * dy * dy
    return g_mean, g_conic, g_opac, g_pay


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def rasterize_forward(frame: SplatFrame, opacity: np.ndarray, payload: np.ndarray,
                      background=None) -> RenderOutput:
    """Composite ``payload`` (n, P) front to back.  ``opacity`` is aligned
    with ``frame.ids``.  ``background`` (P,) fills the residual transmittance.
    """
    payload = _f64(payload)
    payload = payload.reshape(len(frame), payload.shape[-1] if payload.ndim > 1 else 1)
    P = payload.shape[1]
    bg = np.zeros(P) if background is None else _f64(background).reshape(P)
    offsets, lst = frame.tiles
    out, Tfin, last, count = _forward(
        _f64(frame.means2d).reshape(-1, 2), _f64(frame.conics).reshape(-1, 3),
        _f64(opacity).reshape(-1), payload, bg, offsets, lst,
        frame.width, frame.height, TILE)
    return RenderOutput(out, Tfin, last, count, frame, _f64(opacity).reshape(-1),
                        payload, bg)


def rasterize_backward(ro: RenderOutput, grad_color: np.ndarray):
    """Returns gradients ``(means2d, conics, opacity, payload)`` aligned with
    ``ro.frame.ids``.  Conic gradients are w.r.t. the packed ``(a, b, c)``."""
    f = ro.frame
    offsets, lst = f.tiles
    return _backward(_f64(f.means2d).reshape(-1, 2), _f64(f.conics).reshape(-1, 3),
                     ro.opacity, ro.payload, ro.background, offsets, lst,
                     f.width, f.height, TILE, ro.final_transmittance, ro.last,
                     _f64(grad_color).reshape(f.height, f.width, -1))
