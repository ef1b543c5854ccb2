"""Gaussian cloud container (structure of arrays) and its initialization."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from . import geom
from .appearance import FEATURE_DIM, LATENT_DIM, logit, sigmoid

INIT_OPACITY = 0.1


@dataclass
class GaussianCloud:
    means: np.ndarray           # (G, 3) object frame, m
    log_scales: np.ndarray      # (G, 3)
    quats: np.ndarray           # (G, 4) raw, renormalized after every update
    opacity_logits: np.ndarray  # (G,)
    features: np.ndarray        # (G, 72)
    latents: np.ndarray         # (G, 6)
    colors: np.ndarray          # (G, 3) color logits, direct-RGB pathway only

    def __len__(self):
        return len(self.means)

    @classmethod
    def groups(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.groups()}

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def covariances(self) -> np.ndarray:
        return geom.build_covariance(self.quats, self.scales)

    def select(self, idx) -> "GaussianCloud":
        return GaussianCloud(**{k: v[idx].copy() for k, v in self.arrays().items()})

    def append(self, other: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(**{k: np.concatenate([v, getattr(other, k)])
                                for k, v in self.arrays().items()})

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{k: v.copy() for k, v in self.arrays().items()})


def knn_scale(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean distance to the ``k`` nearest other points."""
    d, _ = cKDTree(points).query(points, k=k + 1)
    out = d[:, 1:].mean(axis=1)
    return np.maximum(out, 1e-7)


def initialize_cloud(points: np.ndarray, rng: np.random.Generator) -> GaussianCloud:
    """Isotropic Gaussians on the given surface samples."""
    G = len(points)
    s = knn_scale(points)
    q = np.zeros((G, 4))
    q[:, 0] = 1.0
    return GaussianCloud(
        means=np.array(points, dtype=np.float64),
        log_scales=np.repeat(np.log(s)[:, None], 3, axis=1),
        quats=q,
        opacity_logits=np.full(G, logit(INIT_OPACITY)),
        features=rng.normal(0.0, 0.01, size=(G, FEATURE_DIM)),
        latents=np.zeros((G, LATENT_DIM)),
        colors=np.zeros((G, 3)),
    )
