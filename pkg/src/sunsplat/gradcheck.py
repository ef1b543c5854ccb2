"""Central finite-difference checks of every hand-written reverse pass.

Each suite builds a small randomized instance, contracts the forward output
with a random cotangent to get a scalar, and compares the analytic gradient
against central differences entry by entry (``|a - n| <= atol + rtol·|n|``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geom, losses
from .appearance import (
    MlpParams,
    appearance_backward,
    appearance_forward,
    shadow_refine,
    shadow_refine_backward,
)
from .model import GaussianCloud
from .raster import frame_from_2d, rasterize_backward, rasterize_forward
from .render import Pathway, View, render, render_backward
from .shadow import apply_shadow, apply_shadow_backward

RTOL = 1e-3
ATOL = 1e-6
FD_STEP = 1e-6
# FD entries sampled per large parameter tensor (MLP weights)
MAX_ENTRIES = 64


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<16} max_rel={self.max_rel_err:.2e} "
                f"max_abs={self.max_abs_err:.2e} n={self.n_checked}")


def numeric_grad(f: Callable[[], float], x: np.ndarray, idx=None, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. entries of ``x`` (perturbed in place).

    ``idx`` selects flat indices; returns values aligned with it.
    """
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if idx is None else np.asarray(idx)
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


class _Collector:
    def __init__(self, rng: np.random.Generator, corrupt: bool):
        self.rng = rng
        self.scale = 1.05 if corrupt else 1.0
        self.analytic: list[np.ndarray] = []
        self.numeric: list[np.ndarray] = []

    def check(self, f, x, grad, sample: bool = False):
        flat = grad.reshape(-1)
        idx = None
        if sample and flat.size > MAX_ENTRIES:
            idx = self.rng.choice(flat.size, MAX_ENTRIES, replace=False)
        num = numeric_grad(f, x, idx)
        self.numeric.append(num)
        self.analytic.append(self.scale * (flat if idx is None else flat[idx]))

    def result(self, name: str, rtol=RTOL, atol=ATOL) -> SuiteResult:
        a = np.concatenate(self.analytic)
        n = np.concatenate(self.numeric)
        err = np.abs(a - n)
        rel = err / np.maximum(np.abs(n), atol / rtol)
        ok = bool(np.all(err <= atol + rtol * np.abs(n)))
        return SuiteResult(name, float(rel.max()), float(err.max()), len(a), ok)


def _pinhole(size: int = 8) -> geom.Pinhole:
    return geom.Pinhole(fx=1.2 * size, fy=1.2 * size, cx=size / 2 - 0.5, cy=size / 2 - 0.5,
                        width=size, height=size)


def _unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _random_rotation(rng) -> np.ndarray:
    return geom.quat_to_rotmat(rng.normal(size=4))


def _spd2(rng, n, lo=0.8, hi=4.0):
    th = rng.uniform(0, np.pi, n)
    c, s = np.cos(th), np.sin(th)
    R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    lam = rng.uniform(lo, hi, (n, 2))
    return R @ (lam[:, :, None] * np.swapaxes(R, 1, 2))


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

def suite_projection(rng, corrupt=False) -> SuiteResult:
    K = _pinhole()
    n = 8
    p = np.column_stack([rng.uniform(-1, 1, (n, 2)), rng.uniform(2, 5, n)])
    A = rng.normal(size=(n, 2, 3))
    B = rng.normal(size=(n, 2))

    def f():
        return float(np.sum(A * geom.projection_jacobian(p, K))
                     + np.sum(B * geom.project_points(p, K)))

    J = geom.projection_jacobian(p, K)
    g = geom.projection_jacobian_backward(p, K, A) + np.einsum("nij,ni->nj", J, B)
    c = _Collector(rng, corrupt)
    c.check(f, p, g)
    return c.result("projection")


def suite_covariance(rng, corrupt=False) -> SuiteResult:
    n = 8
    q = rng.normal(size=(n, 4))
    s = rng.uniform(0.1, 1.0, (n, 3))
    G = rng.normal(size=(n, 3, 3))

    def f():
        return float(np.sum(G * geom.build_covariance(q, s)))

    gq, gs = geom.build_covariance_backward(q, s, G)
    c = _Collector(rng, corrupt)
    c.check(f, q, gq)
    c.check(f, s, gs)
    return c.result("covariance")


_TRIU = np.triu_indices(3)


def _sym_from_triu(u: np.ndarray) -> np.ndarray:
    M = np.zeros(u.shape[:-1] + (3, 3))
    M[..., _TRIU[0], _TRIU[1]] = u
    M[..., _TRIU[1], _TRIU[0]] = u
    return M


def suite_splat(rng, corrupt=False) -> SuiteResult:
    """Covariances are perturbed through their 6 unique entries, so the
    perturbed matrix stays symmetric."""
    n = 8
    K = _pinhole()
    cov3 = geom.build_covariance(rng.normal(size=(n, 4)), rng.uniform(0.05, 0.4, (n, 3)))
    u = cov3[:, _TRIU[0], _TRIU[1]].copy()
    W = _random_rotation(rng)
    p = np.column_stack([rng.uniform(-1, 1, (n, 2)), rng.uniform(2, 5, n)])
    J = geom.projection_jacobian(p, K)
    gc = rng.normal(size=(n, 3))

    def f():
        conic, _ = geom.inverse_2x2(geom.splat_covariance(_sym_from_triu(u), W, J))
        return float(np.sum(gc * conic))

    conic, _ = geom.inverse_2x2(geom.splat_covariance(cov3, W, J))
    g_cov2 = geom.inverse_2x2_backward(conic, gc)
    g_cov3, g_J = geom.splat_covariance_backward(cov3, W, J, g_cov2)
    g_sym = g_cov3 + np.swapaxes(g_cov3, 1, 2) - g_cov3 * np.eye(3)
    c = _Collector(rng, corrupt)
    c.check(f, u, g_sym[:, _TRIU[0], _TRIU[1]])
    c.check(f, J, g_J)
    return c.result("splat_covariance")


def suite_rasterizer(rng, corrupt=False) -> SuiteResult:
    n, size, P = 8, 8, 3
    means = rng.uniform(0.5, size - 1.5, (n, 2))
    frame = frame_from_2d(means, _spd2(rng, n), size, size)
    opac = rng.uniform(0.2, 0.8, n)
    pay = rng.uniform(0, 1, (n, P))
    bg = rng.uniform(0, 1, P)
    Gc = rng.normal(size=(size, size, P))

    def f():
        return float(np.sum(Gc * rasterize_forward(frame, opac, pay, bg).color))

    ro = rasterize_forward(frame, opac, pay, bg)
    g_m, g_con, g_o, g_p = rasterize_backward(ro, Gc)
    c = _Collector(rng, corrupt)
    c.check(f, frame.means2d, g_m)
    c.check(f, frame.conics, g_con)
    c.check(f, opac, g_o)
    c.check(f, pay, g_p)
    return c.result("rasterizer")


def suite_appearance_mlp(rng, corrupt=False) -> SuiteResult:
    mlps = MlpParams.create(rng)
    B = 16
    feats = rng.normal(0, 0.5, (B, 72))
    sun = _unit(rng)
    views = _unit(rng, B)
    Gy = rng.normal(size=(B, 3))

    def f():
        return float(np.sum(Gy * appearance_forward(feats, sun, views, mlps.phi)[0]))

    _, cache = appearance_forward(feats, sun, views, mlps.phi)
    grads, g_f, g_v = appearance_backward(views, mlps.phi, cache, Gy)
    c = _Collector(rng, corrupt)
    c.check(f, feats, g_f, sample=True)
    c.check(f, views, g_v)
    for k, v in mlps.phi.params.items():
        c.check(f, v, grads[k], sample=True)
    return c.result("appearance_mlp")


def suite_shadow_mlp(rng, corrupt=False) -> SuiteResult:
    mlps = MlpParams.create(rng)
    psi = mlps.psi
    # a trained-looking head; the zero init would make most gradients vanish
    psi.params["W3"] = rng.normal(0, 0.3, psi.params["W3"].shape)
    psi.params["skip"] = np.array([0.7])
    B = 16
    V = rng.uniform(0.05, 0.95, B)
    sun = _unit(rng)
    mu = rng.uniform(-1, 1, (B, 3))
    lat = rng.normal(0, 0.5, (B, 6))
    radius = 1.7
    gv = rng.normal(size=B)

    def f():
        return float(np.sum(gv * shadow_refine(V, sun, mu, lat, psi, radius)[0]))

    _, cache = shadow_refine(V, sun, mu, lat, psi, radius)
    grads, g_V, g_mu, g_lat = shadow_refine_backward(psi, cache, gv)
    c = _Collector(rng, corrupt)
    c.check(f, V, g_V)
    c.check(f, mu, g_mu)
    c.check(f, lat, g_lat)
    for k, v in psi.params.items():
        c.check(f, v, grads[k], sample=True)
    return c.result("shadow_mlp")


def suite_losses(rng, corrupt=False) -> SuiteResult:
    size = 8
    pred = rng.uniform(0, 1, (size, size, 3))
    gt = rng.uniform(0, 1, (size, size, 3))
    mask = rng.uniform(size=(size, size)) < 0.6
    mask[0, 0] = True
    scales = rng.uniform(0.05, 1.0, (8, 3))
    w = losses.LossWeights(0.2, 10.0)
    c = _Collector(rng, corrupt)

    c.check(lambda: losses.l1_loss(pred, gt, mask)[0], pred, losses.l1_loss(pred, gt, mask)[1])
    c.check(lambda: losses.ssim(pred, gt)[0], pred, losses.ssim(pred, gt)[1])
    c.check(lambda: losses.isotropic_loss(scales)[0], scales, losses.isotropic_loss(scales)[1])
    _, _, gp, gs = losses.total_loss(pred, gt, mask, scales, w, True)
    f = lambda: losses.total_loss(pred, gt, mask, scales, w, True)[0]  # noqa: E731
    c.check(f, pred, gp)
    c.check(f, scales, gs)
    return c.result("losses")


def suite_shadow_multiply(rng, corrupt=False) -> SuiteResult:
    size = 8
    color = rng.uniform(0, 1, (size, size, 3))
    shadow = rng.uniform(0, 1, (size, size))
    G = rng.normal(size=(size, size, 3))

    def f():
        return float(np.sum(G * apply_shadow(color, shadow)))

    gc, gs = apply_shadow_backward(color, shadow, G)
    c = _Collector(rng, corrupt)
    c.check(f, color, gc)
    c.check(f, shadow, gs)
    return c.result("shadow_multiply")


def suite_render(rng, corrupt=False) -> SuiteResult:
    """Whole pipeline (shadow + MLP pathway) with visibility held fixed."""
    n = 6
    K = _pinhole()
    cloud = GaussianCloud(
        means=rng.uniform(-0.3, 0.3, (n, 3)),
        log_scales=np.log(rng.uniform(0.15, 0.35, (n, 3))),
        quats=rng.normal(size=(n, 4)),
        opacity_logits=rng.uniform(-1, 1, n),
        features=rng.normal(0, 0.5, (n, 72)),
        latents=rng.normal(0, 0.5, (n, 6)),
        colors=np.zeros((n, 3)))
    mlps = MlpParams.create(rng)
    mlps.psi.params["W3"] = rng.normal(0, 0.3, mlps.psi.params["W3"].shape)
    view = View(geom.RigidTransform.look_at(np.array([0.3, -0.4, 3.0]), up=(0, 1, 0)), K, _unit(rng))
    pw = Pathway(True, True)
    V0 = rng.uniform(0.1, 0.9, n)
    G = rng.normal(size=(8, 8, 3))

    def f():
        return float(np.sum(G * render(cloud, mlps, view, pw, visibility=V0).image))

    fr = render(cloud, mlps, view, pw, visibility=V0)
    grads, gphi, gpsi, _ = render_backward(cloud, mlps, view, pw, fr, G)
    c = _Collector(rng, corrupt)
    for name in ("means", "log_scales", "quats", "opacity_logits", "latents"):
        c.check(f, getattr(cloud, name), grads[name])
    c.check(f, cloud.features, grads["features"], sample=True)
    for k in ("W0", "W3", "b2"):
        c.check(f, mlps.phi.params[k], gphi[k], sample=True)
        c.check(f, mlps.psi.params[k], gpsi[k], sample=True)
    return c.result("render_pipeline")


SUITES: dict[str, Callable] = {
    "projection": suite_projection,
    "covariance": suite_covariance,
    "splat_covariance": suite_splat,
    "rasterizer": suite_rasterizer,
    "appearance_mlp": suite_appearance_mlp,
    "shadow_mlp": suite_shadow_mlp,
    "losses": suite_losses,
    "shadow_multiply": suite_shadow_multiply,
    "render_pipeline": suite_render,
}


def run_all(seed: int = 0, only=None, corrupt: str | None = None) -> list[SuiteResult]:
    """Run the selected suites (all by default); ``corrupt`` names a suite whose
    analytic gradient is scaled by 1.05 as a negative control."""
    names = list(SUITES) if not only else list(only)
    unknown = [n for n in names + ([corrupt] if corrupt else []) if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    out = []
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        out.append(SUITES[name](rng, corrupt=(name == corrupt)))
    return out
