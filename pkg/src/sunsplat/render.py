"""End-to-end differentiable render of one view: cloud → splats → colors
(direct or MLP) → optional shadow image → final image, and the reverse
pass back to every trainable array."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .appearance import MlpParams, appearance_backward, appearance_forward, sigmoid
from .model import GaussianCloud
from .raster import (
    RenderOutput,
    SplatFrame,
    cull_and_sort,
    rasterize_backward,
    rasterize_forward,
)
from .shadow import (
    apply_shadow,
    apply_shadow_backward,
    refine_visibility,
    refine_visibility_backward,
    sun_visibility,
)


@dataclass(frozen=True)
class Pathway:
    use_mlp: bool = True
    use_shadow: bool = True


@dataclass
class View:
    pose: geom.RigidTransform
    K: geom.Pinhole
    sun: np.ndarray


@dataclass
class FrameRender:
    image: np.ndarray               # (H, W, 3) final
    rgb: np.ndarray                 # (H, W, 3) before the shadow multiply
    shadow: np.ndarray | None       # (H, W)
    alpha: np.ndarray               # (H, W) accumulated opacity
    frame: SplatFrame
    raster: RenderOutput
    V: np.ndarray | None = None     # raw visibility of the whole cloud
    Vp: np.ndarray | None = None    # refined visibility of visible Gaussians
    caches: dict = field(default_factory=dict)


def render(cloud: GaussianCloud, mlps: MlpParams, view: View, pathway: Pathway,
           sun_distance: float = 10.0, scene_radius: float = 1.0,
           visibility: np.ndarray | None = None) -> FrameRender:
    """Forward pass.  ``visibility`` overrides the sun-visibility pass (used
    to hold it fixed, e.g. for gradient checks)."""
    cov3 = cloud.covariances()
    sf = cull_and_sort(cloud.means, cov3, view.pose, view.K)
    ids = sf.ids
    opac_all = cloud.opacity
    o = opac_all[ids]
    caches = {}
    if pathway.use_mlp:
        d = view.pose.center - cloud.means[ids]
        dist = np.linalg.norm(d, axis=1, keepdims=True)
        views = d / dist
        rgb, caches["phi"] = appearance_forward(cloud.features[ids], view.sun, views, mlps.phi)
        caches["views"], caches["dist"] = views, dist
    else:
        rgb = sigmoid(cloud.colors[ids])
    caches["rgb"] = rgb
    V = Vp = None
    if pathway.use_shadow:
        V = visibility
        if V is None:
            V = sun_visibility(cloud.means, cov3, opac_all, view.sun, view.K, sun_distance)
        Vp, caches["psi"] = refine_visibility(V[ids], cloud.latents[ids], cloud.means[ids],
                                              view.sun, mlps.psi, scene_radius)
        payload = np.concatenate([rgb, Vp[:, None]], axis=1)
        bg = np.array([0.0, 0.0, 0.0, 1.0])
    else:
        payload, bg = rgb, np.zeros(3)
    ro = rasterize_forward(sf, o, payload, bg)
    rgb_img = ro.color[..., :3]
    if pathway.use_shadow:
        shadow = ro.color[..., 3]
        image = apply_shadow(rgb_img, shadow)
    else:
        shadow, image = None, rgb_img
    return FrameRender(image, rgb_img, shadow, 1.0 - ro.final_transmittance, sf, ro,
                       V, Vp, caches)


def render_backward(cloud: GaussianCloud, mlps: MlpParams, view: View, pathway: Pathway,
                    fr: FrameRender, grad_image: np.ndarray):
    """Gradients of a scalar loss w.r.t. every trainable array.

    Returns ``(cloud_grads, phi_grads, psi_grads, grad_means2d)`` where
    ``cloud_grads`` is keyed like :meth:`GaussianCloud.arrays` and
    ``grad_means2d`` (n_visible, 2) feeds densification statistics.
    Visibility toward the sun is treated as a constant.
    """
    sf, ro, c = fr.frame, fr.raster, fr.caches
    ids = sf.ids
    if pathway.use_shadow:
        g_rgb, g_sh = apply_shadow_backward(fr.rgb, fr.shadow, grad_image)
        g_color = np.concatenate([g_rgb, g_sh[..., None]], axis=-1)
    else:
        g_color = grad_image
    g_m2, g_conic, g_opac, g_pay = rasterize_backward(ro, g_color)

    G = len(cloud)
    grads = {k: np.zeros_like(v) for k, v in cloud.arrays().items()}
    phi_grads = psi_grads = None
    g_means_vis = np.zeros((len(ids), 3))

    g_rgb_pay = g_pay[:, :3]
    if pathway.use_mlp:
        phi_grads, g_feat, g_views = appearance_backward(c["views"], mlps.phi, c["phi"], g_rgb_pay)
        grads["features"][ids] = g_feat
        v = c["views"]
        g_d = (g_views - v * np.sum(v * g_views, axis=1, keepdims=True)) / c["dist"]
        g_means_vis -= g_d
    else:
        rgb = c["rgb"]
        grads["colors"][ids] = g_rgb_pay * rgb * (1.0 - rgb)
    if pathway.use_shadow:
        psi_grads, _, g_mu, g_lat = refine_visibility_backward(mlps.psi, c["psi"], g_pay[:, 3])
        grads["latents"][ids] = g_lat
        g_means_vis += g_mu

    o = ro.opacity
    grads["opacity_logits"][ids] = g_opac * o * (1.0 - o)

    # conic -> 2D covariance -> (3D covariance, projection Jacobian)
    g_cov2 = geom.inverse_2x2_backward(sf.conics, g_conic)
    R = view.pose.R
    scales = cloud.scales[ids]
    quats = cloud.quats[ids]
    cov3 = geom.build_covariance(quats, scales)
    g_cov3, g_J = geom.splat_covariance_backward(cov3, R, sf.J, g_cov2)
    g_pcam = geom.projection_jacobian_backward(sf.p_cam, view.K, g_J)
    g_pcam += np.einsum("nij,ni->nj", sf.J, g_m2)
    g_q, g_s = geom.build_covariance_backward(quats, scales, g_cov3)
    g_means_vis += g_pcam @ R
    grads["means"][ids] += g_means_vis
    grads["quats"][ids] = g_q
    grads["log_scales"][ids] = g_s * scales
    assert grads["means"].shape[0] == G
    return grads, phi_grads, psi_grads, g_m2
