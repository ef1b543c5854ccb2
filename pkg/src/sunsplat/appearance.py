"""Sun/view-conditioned color MLP and the shadow refinement MLP.

Both networks are plain affine+ReLU stacks with a sigmoid head, evaluated
batched over Gaussians with hand-written reverse passes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_DIM = 72
LATENT_DIM = 6
N_FREQ = 4
PHI_HIDDEN = (256, 256, 256)
PSI_HIDDEN = (32, 32, 32)
# clip range for the visibility skip path of the shadow MLP
SKIP_EPS = 0.02


def positional_encode(v: np.ndarray, L: int = N_FREQ) -> np.ndarray:
    """``[sin(2⁰πp), cos(2⁰πp), …, sin(2^{L-1}πp), cos(2^{L-1}πp)]`` per
    component ``p`` of ``v`` (component-major), shape ``(..., 6L)`` for 3-vectors."""
    if L < 1:
        raise ValueError("L must be >= 1")
    v = np.asarray(v, dtype=np.float64)
    arg = v[..., :, None] * (np.pi * 2.0 ** np.arange(L))      # (..., D, L)
    out = np.stack([np.sin(arg), np.cos(arg)], axis=-1)       # (..., D, L, 2)
    return out.reshape(v.shape[:-1] + (v.shape[-1] * 2 * L,))


def positional_encode_backward(v: np.ndarray, grad_enc: np.ndarray, L: int = N_FREQ):
    v = np.asarray(v, dtype=np.float64)
    freq = np.pi * 2.0 ** np.arange(L)
    arg = v[..., :, None] * freq
    g = grad_enc.reshape(v.shape + (L, 2))
    return np.sum(freq * (np.cos(arg) * g[..., 0] - np.sin(arg) * g[..., 1]), axis=-1)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p):
    return np.log(p) - np.log1p(-p)


class Mlp:
    """Affine+ReLU stack with a sigmoid output.

    With ``skip=True`` the first input column additionally feeds the output
    pre-activation through ``skip * logit(clip(x0))``; ``skip`` is a trainable
    scalar.
    """

    def __init__(self, n_in: int, hidden, n_out: int, rng: np.random.Generator,
                 skip: bool = False, zero_last: bool = False):
        self.n_in = n_in
        self.hidden = tuple(hidden)
        self.n_out = n_out
        self.params: dict[str, np.ndarray] = {}
        widths = (n_in,) + self.hidden + (n_out,)
        n_layers = len(widths) - 1
        for k in range(n_layers):
            fan_in, fan_out = widths[k], widths[k + 1]
            last = k == n_layers - 1
            bound = (1.0 if last else np.sqrt(6.0)) / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            if last and zero_last:
                W[:] = 0.0
            self.params[f"W{k}"] = W
            self.params[f"b{k}"] = np.zeros(fan_out)
        self.n_layers = n_layers
        self.has_skip = skip
        if skip:
            self.params["skip"] = np.ones(1)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected {self.n_in} inputs, got {x.shape[-1]}")
        acts = [x]
        h = x
        for k in range(self.n_layers):
            z = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
            if k < self.n_layers - 1:
                h = np.maximum(z, 0.0)
                acts.append(h)
        if self.has_skip:
            v = np.clip(x[:, :1], SKIP_EPS, 1.0 - SKIP_EPS)
            z = z + self.params["skip"] * logit(v)
        y = sigmoid(z)
        return y, (acts, y)

    def backward(self, cache, grad_y: np.ndarray):
        """Returns ``(param_grads, grad_x)``; batch gradients are summed."""
        acts, y = cache
        grads = {}
        gz = grad_y * y * (1.0 - y)
        x = acts[0]
        gx_skip = None
        if self.has_skip:
            raw = x[:, :1]
            inside = (raw > SKIP_EPS) & (raw < 1.0 - SKIP_EPS)
            v = np.clip(raw, SKIP_EPS, 1.0 - SKIP_EPS)
            gs = np.sum(gz, axis=1, keepdims=True)
            grads["skip"] = np.array([np.sum(gs * logit(v))])
            gx_skip = np.where(inside, gs * self.params["skip"] / (v * (1.0 - v)), 0.0)
        for k in range(self.n_layers - 1, -1, -1):
            h = acts[k]
            grads[f"W{k}"] = h.T @ gz
            grads[f"b{k}"] = gz.sum(axis=0)
            gh = gz @ self.params[f"W{k}"].T
            if k > 0:
                gz = gh * (h > 0)
        if gx_skip is not None:
            gh[:, :1] += gx_skip
        return grads, gh


@dataclass
class MlpParams:
    """Appearance network Φ and shadow network Ψ."""

    phi: Mlp
    psi: Mlp

    @classmethod
    def create(cls, rng: np.random.Generator, L: int = N_FREQ) -> "MlpParams":
        phi_in = FEATURE_DIM + 6 * L + 6 * L
        psi_in = 1 + 6 * L + 6 * L + LATENT_DIM
        phi = Mlp(phi_in, PHI_HIDDEN, 3, rng)
        psi = Mlp(psi_in, PSI_HIDDEN, 1, rng, skip=True, zero_last=True)
        if phi.n_in != 120 or psi.n_in != 55:
            raise ValueError("encoding bookkeeping mismatch")
        return cls(phi, psi)


def appearance_input(features, sun, views, L: int = N_FREQ) -> np.ndarray:
    features = np.atleast_2d(features)
    G = features.shape[0]
    gs = np.broadcast_to(positional_encode(sun, L), (G, 6 * L))
    gv = np.broadcast_to(positional_encode(views, L), (G, 6 * L))
    return np.concatenate([features, gs, gv], axis=1)


def appearance_forward(features, sun, views, phi: Mlp, L: int = N_FREQ):
    """Per-Gaussian RGB from features, the sun vector and per-Gaussian view
    vectors.  Returns ``(rgb (G, 3), cache)``."""
    x = appearance_input(features, sun, views, L)
    rgb, cache = phi.forward(x)
    return rgb, cache


def appearance_backward(views, phi: Mlp, cache, grad_rgb, L: int = N_FREQ):
    """Returns ``(phi_grads, grad_features, grad_views)``."""
    grads, gx = phi.backward(cache, grad_rgb)
    nf = gx.shape[1] - 12 * L
    grad_views = positional_encode_backward(np.atleast_2d(views), gx[:, nf + 6 * L:], L)
    return grads, gx[:, :nf], grad_views


def shadow_input(V, sun, mu_normalized, latents, L: int = N_FREQ) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64).reshape(-1, 1)
    G = V.shape[0]
    gs = np.broadcast_to(positional_encode(sun, L), (G, 6 * L))
    gm = positional_encode(np.atleast_2d(mu_normalized), L)
    return np.concatenate([V, gs, gm, np.atleast_2d(latents)], axis=1)


def shadow_refine(V, sun, mu, latents, psi: Mlp, scene_radius: float = 1.0,
                  L: int = N_FREQ):
    """Refined visibility ``V′`` (G,) and the cache for :func:`shadow_refine_backward`."""
    mu_n = np.atleast_2d(mu) / scene_radius
    x = shadow_input(V, sun, mu_n, latents, L)
    y, cache = psi.forward(x)
    return y[:, 0], (cache, mu_n, scene_radius, L)


def shadow_refine_backward(psi: Mlp, cache, grad_Vp):
    """Returns ``(psi_grads, grad_V, grad_mu, grad_latents)``."""
    cache, mu_n, radius, L = cache
    grads, gx = psi.backward(cache, np.asarray(grad_Vp).reshape(-1, 1))
    g_enc = gx[:, 1 + 6 * L:1 + 12 * L]
    grad_mu = positional_encode_backward(mu_n, g_enc, L) / radius
    return grads, gx[:, 0], grad_mu, gx[:, -LATENT_DIM:]
