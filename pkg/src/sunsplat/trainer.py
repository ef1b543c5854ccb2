"""Keyframe-windowed online training: Adam with a per-round sawtooth
learning rate, densification/pruning on a round cadence, checkpoints."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import checkpoint, datagen, geom
from .appearance import MlpParams
from .config import RunConfig
from .keyframes import Keyframe, KeyframeWindow, view_vector
from .losses import LossWeights, total_loss
from .model import GaussianCloud, initialize_cloud
from .raster import WEIGHT_MIN
from .render import View, render, render_backward

log = logging.getLogger(__name__)

LOG_SCALE_MIN = np.log(1e-6)


class NotReady(RuntimeError):
    pass


class EmptyDataset(ValueError):
    pass


def sawtooth_lr(lr0: float, step_in_round: int, steps_per_round: int, decay: float = 0.1) -> float:
    """Exponential decay from ``lr0`` toward ``decay·lr0`` within a round."""
    return lr0 * decay ** (step_in_round / steps_per_round)


class Adam:
    """Adam over named arrays; moments are kept per name."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.b1, self.b2 = betas
        self.eps = eps
        self.state: dict[str, list] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        st = self.state.get(name)
        if st is None or st[0].shape != param.shape:
            st = self.state[name] = [np.zeros_like(param), np.zeros_like(param), 0]
        m, v = st[0], st[1]
        st[2] += 1
        t = st[2]
        m *= self.b1
        m += (1 - self.b1) * grad
        v *= self.b2
        v += (1 - self.b2) * grad * grad
        mhat = m / (1 - self.b1 ** t)
        vhat = v / (1 - self.b2 ** t)
        param -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def direction(self, name: str) -> np.ndarray | None:
        """Normalized update direction of the last step (no LR applied)."""
        st = self.state.get(name)
        if st is None or st[2] == 0:
            return None
        m, v, t = st
        return (m / (1 - self.b1 ** t)) / (np.sqrt(v / (1 - self.b2 ** t)) + self.eps)

    def remap(self, name: str, src: np.ndarray, zero: np.ndarray) -> None:
        """Reindex per-Gaussian moments: row ``k`` takes row ``src[k]``, zeroed where ``zero``."""
        st = self.state.get(name)
        if st is None:
            return
        for i in (0, 1):
            arr = st[i][src].copy()
            arr[zero] = 0.0
            st[i] = arr


@dataclass
class DensifyStats:
    grad_accum: np.ndarray
    count: np.ndarray
    max_radius: np.ndarray

    @classmethod
    def zeros(cls, G: int) -> "DensifyStats":
        return cls(np.zeros(G), np.zeros(G), np.zeros(G))


@dataclass
class TrainState:
    cloud: GaussianCloud
    mlps: MlpParams
    config: RunConfig
    scene_radius: float
    opt: Adam = field(default_factory=Adam)
    window: KeyframeWindow | None = None
    stats: DensifyStats | None = None
    round: int = 0
    step: int = 0
    frames_consumed: int = 0
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.window is None:
            self.window = KeyframeWindow(self.config.window, self.config.theta_view_deg)
        if self.stats is None:
            self.stats = DensifyStats.zeros(len(self.cloud))
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed + 1)

    def param_groups(self) -> list[str]:
        pw = self.config.pathway
        groups = ["means", "log_scales", "quats", "opacity_logits"]
        if pw.use_mlp:
            groups += ["features"]
        else:
            groups += ["colors"]
        if pw.use_shadow:
            groups += ["latents"]
        return groups

    def base_lr(self, group: str) -> float:
        lr = self.config.lr[group]
        return lr * self.scene_radius if group == "means" else lr


def new_state(points: np.ndarray, cfg: RunConfig, scene_radius: float) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    cloud = initialize_cloud(points, rng)
    mlps = MlpParams.create(rng)
    return TrainState(cloud, mlps, cfg, scene_radius)


def resume_state(ckpt: checkpoint.Checkpoint, frames: list[datagen.FrameRecord]) -> TrainState:
    """Rebuild a training state from a checkpoint and the training frames.

    Optimizer moments are not stored, so they restart from zero.
    """
    cloud, mlps, cfg = checkpoint.restore(ckpt)
    meta = ckpt.state
    state = TrainState(cloud, mlps, cfg, float(meta["scene_radius"]))
    state.round = int(meta["round"])
    state.step = int(meta["step"])
    state.frames_consumed = int(meta["frames_consumed"])
    state.rng.bit_generator.state = meta["rng"]
    by_id = {f.frame_id: f for f in frames}
    missing = [i for i in meta["window_ids"] if i not in by_id]
    if missing:
        raise EmptyDataset(f"keyframes {missing} are not in the dataset")
    state.window.frames = [Keyframe(i, view_vector(by_id[i].pose), by_id[i])
                           for i in meta["window_ids"]]
    state.window.version = int(meta["window_version"])
    return state


def sun_distance(state: TrainState) -> float:
    d = [np.linalg.norm(k.data.pose.center) for k in state.window.frames]
    return state.config.sun_kappa * float(np.median(d))


def train_step(state: TrainState, frame: datagen.FrameRecord, lr_scale: float,
               d_sun: float) -> dict:
    cfg = state.config
    pw = cfg.pathway
    cloud, mlps = state.cloud, state.mlps
    view = View(frame.pose, frame.K, frame.sun)
    fr = render(cloud, mlps, view, pw, d_sun, state.scene_radius)
    region = frame.mask | (fr.alpha > WEIGHT_MIN)
    weights = LossWeights(cfg.lambda_ssim, cfg.lambda_iso)
    loss, parts, g_img, g_scales = total_loss(fr.image, frame.image, region, cloud.scales,
                                              weights, cfg.use_iso)
    grads, g_phi, g_psi, g_m2 = render_backward(cloud, mlps, view, pw, fr, g_img)
    if g_scales is not None:
        grads["log_scales"] += g_scales * cloud.scales

    for name in state.param_groups():
        state.opt.step(name, getattr(cloud, name), grads[name], state.base_lr(name) * lr_scale)
    if pw.use_mlp:
        for k, g in g_phi.items():
            state.opt.step(f"phi.{k}", mlps.phi.params[k], g, cfg.lr["phi"] * lr_scale)
    if pw.use_shadow:
        for k, g in g_psi.items():
            state.opt.step(f"psi.{k}", mlps.psi.params[k], g, cfg.lr["psi"] * lr_scale)
    cloud.quats /= np.linalg.norm(cloud.quats, axis=1, keepdims=True)
    np.clip(cloud.log_scales, LOG_SCALE_MIN, np.log(state.scene_radius), out=cloud.log_scales)

    # screen-space gradient in normalized device units
    ids = fr.frame.ids
    K = frame.K
    ndc = g_m2 * np.array([0.5 * K.width, 0.5 * K.height])
    st = state.stats
    st.grad_accum[ids] += np.linalg.norm(ndc, axis=1)
    st.count[ids] += 1
    st.max_radius[ids] = np.maximum(st.max_radius[ids], fr.frame.radii)
    state.step += 1
    return {"loss_total": loss, "loss_l1": parts["l1"], "loss_ssim": parts["ssim"],
            "loss_iso": parts["iso"]}


def training_round(state: TrainState, on_record: Callable[[dict], None] | None = None) -> list[dict]:
    """One optimizer step per keyframe, in seeded random order."""
    win = state.window
    if not win.full:
        raise NotReady(f"window holds {len(win)}/{win.max_size} keyframes")
    frames = list(win.frames)
    order = state.rng.permutation(len(frames))
    d_sun = sun_distance(state)
    records = []
    n = len(frames)
    for k, idx in enumerate(order):
        scale = sawtooth_lr(1.0, k, n, state.config.lr_decay)
        fr = frames[idx].data
        rec = {"round": state.round, "frame_id": int(fr.frame_id),
               **train_step(state, fr, scale, d_sun),
               "gaussian_count": len(state.cloud), "lr": state.base_lr("means") * scale}
        records.append(rec)
        if on_record:
            on_record(rec)
    state.round += 1
    if state.round % state.config.densify_every == 0:
        densify_and_prune(state)
    return records


# --------------------------------------------------------------------------
# densification
# --------------------------------------------------------------------------

def _reindex(state: TrainState, src: np.ndarray, zero_moments: np.ndarray,
             overrides: dict[str, np.ndarray]) -> None:
    cloud = state.cloud
    new = {}
    for name, arr in cloud.arrays().items():
        new[name] = overrides[name] if name in overrides else arr[src].copy()
        state.opt.remap(name, src, zero_moments)
    state.cloud = GaussianCloud(**new)


def densify_and_prune(state: TrainState) -> dict:
    """Clone small / split large high-gradient Gaussians, prune faint or
    oversized ones, and keep optimizer moments aligned.  Returns counts."""
    cfg = state.config
    cloud = state.cloud
    st = state.stats
    G = len(cloud)
    grad = np.where(st.count > 0, st.grad_accum / np.maximum(st.count, 1), 0.0)
    max_scale = cloud.scales.max(axis=1)
    small = cfg.tau_small * state.scene_radius
    hot = grad > cfg.tau_grad
    room = max(0, cfg.max_gaussians - G)
    cand = np.flatnonzero(hot)
    if len(cand) > room:
        cand = cand[np.argsort(-grad[cand], kind="stable")[:room]]
    cand = np.sort(cand)
    clone = cand[max_scale[cand] <= small]
    split = cand[max_scale[cand] > small]

    # clones: copy, shifted by one normalized update step
    src = [np.arange(G), clone, np.repeat(split, 2)]
    src = np.concatenate(src)
    zero = np.zeros(len(src), dtype=bool)
    zero[G + len(clone):] = True
    means = cloud.means[src].copy()
    step_dir = state.opt.direction("means")
    if step_dir is not None and len(clone):
        means[G:G + len(clone)] -= state.base_lr("means") * step_dir[clone]
    log_scales = cloud.log_scales[src].copy()
    if len(split):
        par = np.repeat(split, 2)
        s = cloud.scales[par]
        R = geom.quat_to_rotmat(cloud.quats[par])
        offs = np.einsum("nij,nj->ni", R, s * state.rng.normal(size=s.shape))
        means[G + len(clone):] += offs
        log_scales[G + len(clone):] -= np.log(1.6)
    _reindex(state, src, zero, {"means": means, "log_scales": log_scales})

    # drop split parents, then prune
    keep = np.ones(len(src), dtype=bool)
    keep[split] = False
    radius = np.concatenate([st.max_radius, st.max_radius[clone], np.zeros(2 * len(split))])
    keep &= state.cloud.opacity >= cfg.tau_prune
    max_px = cfg.max_screen_frac * max(_image_size(state))
    keep &= radius <= max_px
    idx = np.flatnonzero(keep)
    n_pruned = int((~keep).sum()) - len(split)
    _reindex(state, idx, np.zeros(len(idx), dtype=bool), {})
    state.stats = DensifyStats.zeros(len(state.cloud))
    counts = {"cloned": len(clone), "split": len(split), "pruned": n_pruned,
              "total": len(state.cloud)}
    log.debug("densify round %d: %s", state.round, counts)
    return counts


def _image_size(state: TrainState) -> tuple:
    if not state.window.frames:
        return (np.inf,)
    K = state.window.frames[0].data.K
    return K.width, K.height


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainState
    records: list[dict]
    rounds: int
    elapsed: float

    @property
    def steps_per_sec(self) -> float:
        return len(self.records) / self.elapsed if self.elapsed > 0 else float("nan")


def run_training(frames: Iterable[datagen.FrameRecord], cfg: RunConfig, points: np.ndarray,
                 scene_radius: float, out_dir=None, state: TrainState | None = None,
                 on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """Stream frames through the keyframe window and fire a round on every
    composition change once the window is full."""
    frames = list(frames)
    if not frames:
        raise EmptyDataset("dataset has no frames")
    if cfg.max_frames is not None:
        frames = frames[:cfg.max_frames]
    if state is None:
        state = new_state(points, cfg, scene_radius)
    out = Path(out_dir) if out_dir is not None else None
    logf = winf = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        mode = "a" if state.frames_consumed else "w"
        logf = open(out / "train_log.jsonl", mode)
        winf = open(out / "window_log.jsonl", mode)
    records: list[dict] = []

    def emit(rec):
        records.append(rec)
        if logf:
            logf.write(json.dumps(rec) + "\n")
        if on_record:
            on_record(rec)

    t0 = time.perf_counter()
    rounds = 0
    try:
        for fr in frames[state.frames_consumed:]:
            admitted, _ = state.window.ingest(fr.frame_id, view_vector(fr.pose), fr)
            state.frames_consumed += 1
            if admitted and state.window.full:
                if winf:
                    winf.write(json.dumps({
                        "round": state.round, "frame_ids": state.window.ids,
                        "views": [k.view.round(6).tolist() for k in state.window.frames]}) + "\n")
                training_round(state, emit)
                rounds += 1
                if out is not None and cfg.checkpoint_every and state.round % cfg.checkpoint_every == 0:
                    checkpoint.save(out / f"ckpt_{state.round:05d}.sgsc", state)
    finally:
        for f in (logf, winf):
            if f:
                f.close()
    elapsed = time.perf_counter() - t0
    if out is not None:
        checkpoint.save(out / "final.sgsc", state)
        # wall-clock numbers stay out of the checkpoint so it is reproducible
        steps = len(records)
        (out / "run_summary.json").write_text(json.dumps({
            "config_id": cfg.config_id, "rounds": rounds, "steps": steps, "elapsed_s": elapsed,
            "steps_per_sec": steps / elapsed if elapsed > 0 else None,
            "gaussian_count": len(state.cloud)}, indent=2))
    if state.step:
        log.info("%d steps in %.1fs (%.2f steps/s), %d Gaussians", state.step, elapsed,
                 state.step / max(elapsed, 1e-9), len(state.cloud))
    return TrainResult(state, records, rounds, elapsed)
