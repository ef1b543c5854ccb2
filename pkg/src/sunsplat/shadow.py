"""Per-Gaussian sun visibility by splatting toward the light.

The cloud is sorted along a virtual camera placed on the sun vector; each
Gaussian's visibility is the transmittance accumulated by everything in
front of it, evaluated at its own projected center.
"""
from __future__ import annotations

import numba as nb
import numpy as np

from . import geom
from .appearance import Mlp, shadow_refine, shadow_refine_backward
from .raster import (
    ALPHA_MAX,
    TILE,
    WEIGHT_MIN,
    SplatFrame,
    bin_tiles,
    cull_and_sort,
    rasterize_forward,
)


class EmptyCloud(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def sun_camera(sun: np.ndarray, distance: float, up=None) -> geom.RigidTransform:
    """Virtual camera at ``distance·sun`` looking back at the object origin."""
    sun = np.asarray(sun, dtype=np.float64)
    sun = sun / np.linalg.norm(sun)
    if up is None:
        up = geom.orthogonal_axis(sun)
    return geom.RigidTransform.look_at(distance * sun, np.zeros(3), up)


@nb.njit(cache=True)
def _visibility(means2d, conics, opac, offsets, lst, origin, tx, tile):
    n = means2d.shape[0]
    V = np.ones(n)
    for i in range(n):
        cx = int(np.floor((means2d[i, 0] - origin[0]) / tile))
        cy = int(np.floor((means2d[i, 1] - origin[1]) / tile))
        t = cy * tx + cx
        T = 1.0
        for k in range(offsets[t], offsets[t + 1]):
            j = lst[k]
            if j >= i:
                break
            dx = means2d[j, 0] - means2d[i, 0]
            dy = means2d[j, 1] - means2d[i, 1]
            power = -0.5 * (conics[j, 0] * dx * dx + conics[j, 2] * dy * dy) \
                - conics[j, 1] * dx * dy
            w = np.exp(power)
            if w < WEIGHT_MIN:
                continue
            T *= 1.0 - min(ALPHA_MAX, opac[j] * w)
        V[i] = T
    return V


def sun_visibility(means: np.ndarray, cov3: np.ndarray, opacity: np.ndarray,
                   sun: np.ndarray, K: geom.Pinhole, distance: float,
                   up=None) -> np.ndarray:
    """Visibility toward the sun for every Gaussian of the cloud, shape (G,)."""
    G = len(means)
    if G == 0:
        raise EmptyCloud("cannot compute visibility of an empty cloud")
    T = sun_camera(sun, distance, up)
    frame = cull_and_sort(means, cov3, T, K, frustum=False)
    V = np.ones(G)
    if len(frame) == 0:
        return V
    # virtual tile grid covering every projected center; the scene image
    # bounds are irrelevant here
    m2 = frame.means2d
    origin = m2.min(axis=0) - frame.radii.max() - 1.0
    extent = m2.max(axis=0) + frame.radii.max() + 1.0 - origin
    w, h = int(np.ceil(extent[0])) + 1, int(np.ceil(extent[1])) + 1
    offsets, lst = bin_tiles(m2 - origin, frame.radii, w, h, TILE)
    tx = (w + TILE - 1) // TILE
    vis = _visibility(np.ascontiguousarray(m2), np.ascontiguousarray(frame.conics),
                      np.ascontiguousarray(opacity[frame.ids], dtype=np.float64),
                      offsets, lst, origin, tx, TILE)
    V[frame.ids] = vis
    return V


def refine_visibility(V, latents, means, sun, psi: Mlp, scene_radius: float):
    """``V′ = Ψ(V, γ(sun), γ(μ/r), l)``; returns ``(V′, cache)``."""
    return shadow_refine(V, sun, means, latents, psi, scene_radius)


def refine_visibility_backward(psi: Mlp, cache, grad_Vp):
    return shadow_refine_backward(psi, cache, grad_Vp)


def shadow_image(frame: SplatFrame, opacity: np.ndarray, Vp: np.ndarray):
    """Splat refined visibility with the viewing camera.  Uncovered pixels
    read 1.  Returns ``(image (H, W), render output)``."""
    ro = rasterize_forward(frame, opacity, np.asarray(Vp).reshape(-1, 1),
                           background=np.ones(1))
    return ro.color[..., 0], ro


def apply_shadow(color: np.ndarray, shadow: np.ndarray) -> np.ndarray:
    if color.shape[:2] != shadow.shape[:2]:
        raise DimensionMismatch(f"{color.shape[:2]} vs {shadow.shape[:2]}")
    return color * shadow[..., None]


def apply_shadow_backward(color, shadow, grad_out):
    """Returns ``(grad_color, grad_shadow)``."""
    return grad_out * shadow[..., None], np.sum(grad_out * color, axis=-1)
