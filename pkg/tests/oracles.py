"""Independent reference implementations used by the unit and acceptance tests."""
import numpy as np

from sunsplat.raster import ALPHA_MAX, T_MIN, WEIGHT_MIN
from sunsplat.shadow import sun_camera


def composite_oracle(means2d, cov2d, opac, payload, bg, width, height):
    """Literal per-pixel front-to-back compositing with the same skip and
    termination rules, no tiling."""
    inv = np.linalg.inv(cov2d)
    out = np.zeros((height, width, payload.shape[1]))
    for y in range(height):
        for x in range(width):
            T = 1.0
            acc = np.zeros(payload.shape[1])
            for g in range(len(means2d)):
                d = np.array([x, y], dtype=np.float64) - means2d[g]
                w = np.exp(-0.5 * d @ inv[g] @ d)
                if w < WEIGHT_MIN:
                    continue
                a = min(ALPHA_MAX, opac[g] * w)
                if T * (1 - a) < T_MIN:
                    break
                acc += T * a * payload[g]
                T *= 1 - a
            out[y, x] = acc + T * bg
    return out


def random_scene(rng, n, size, P=3, spread=1.0):
    """Random 2D splats in depth order: means, covariances, opacities, payload, background."""
    th = rng.uniform(0, np.pi, n)
    R = np.stack([np.stack([np.cos(th), -np.sin(th)], -1), np.stack([np.sin(th), np.cos(th)], -1)], -2)
    lam = rng.uniform(0.3, 6.0, (n, 2)) * spread
    cov = R @ (lam[:, :, None] * np.swapaxes(R, 1, 2))
    means = rng.uniform(-2, size + 1, (n, 2))
    opac = rng.uniform(0.05, 1.0, n)
    pay = rng.uniform(0, 1, (n, P))
    bg = rng.uniform(0, 1, P)
    return means, cov, opac, pay, bg


def ray_oracle(means, cov3, opac, sun, distance):
    """Per-Gaussian transmittance along the ray from the sun camera through
    its mean, compositing each nearer Gaussian at its peak density on that ray."""
    cam = sun_camera(sun, distance)
    o = cam.center
    depth = cam.apply(means)[:, 2]
    order = np.argsort(depth, kind="stable")
    inv = np.linalg.inv(cov3)
    V = np.ones(len(means))
    for rank, i in enumerate(order):
        d = means[i] - o
        d /= np.linalg.norm(d)
        T = 1.0
        for j in order[:rank]:
            A = inv[j]
            r = means[j] - o
            m2 = r @ A @ r - (d @ A @ r) ** 2 / (d @ A @ d)
            w = np.exp(-0.5 * m2)
            if w < WEIGHT_MIN:
                continue
            T *= 1 - min(ALPHA_MAX, opac[j] * w)
        V[i] = T
    return V


def brute_force_eviction(views):
    """1-based reading of the score: d(i) = max over j in [3, n], j != i of vi·vj,
    for i in [3, n]; evict the max, oldest on ties.  Returns a 0-based index."""
    n = len(views)
    best, best_i = -np.inf, None
    for i in range(3, n + 1):
        d = max(float(views[i - 1] @ views[j - 1]) for j in range(3, n + 1) if j != i)
        if d >= best:
            best, best_i = d, i
    return best_i - 1


def segment_hits_mesh(origin, direction, tris, length=100.0):
    """Plane intersection plus same-side point-in-triangle test for the
    segment origin → origin + length·direction."""
    for a, b, c in tris:
        n = np.cross(b - a, c - a)
        denom = n @ direction
        if abs(denom) < 1e-14:
            continue
        t = n @ (a - origin) / denom
        if not (1e-9 < t < length):
            continue
        p = origin + t * direction
        if (np.cross(b - a, p - a) @ n >= 0 and np.cross(c - b, p - b) @ n >= 0
                and np.cross(a - c, p - c) @ n >= 0):
            return True
    return False
