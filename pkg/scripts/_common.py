"""Shared helpers for the experiment scripts: dataset setup, a cached train
step through the CLI, and evaluation of a finished run."""
import json
from pathlib import Path

import numpy as np

from sunsplat import checkpoint, datagen, losses
from sunsplat.cli import main
from sunsplat.evaluate import evaluate

ROOT = Path(__file__).resolve().parents[1]
DESK = json.loads((ROOT / "configs" / "desk_scale.json").read_text())


def ensure_dataset(path: Path, seed: int = 0) -> Path:
    if not (path / "eval" / "manifest.json").is_file():
        if main(["generate", "--out", str(path), "--seed", str(seed)]) != 0:
            raise SystemExit("dataset generation failed")
    return path


def train(dataset: Path, out: Path, **overrides) -> Path:
    """Train under the desk-scale config plus ``overrides`` unless ``out`` already holds a result."""
    if (out / "final.sgsc").is_file() and (out / "run_summary.json").is_file():
        return out
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "run_config.json"
    cfg.write_text(json.dumps({**DESK, **overrides}, indent=2))
    if main(["train", str(dataset), str(cfg), "--out", str(out)]) != 0:
        raise SystemExit(f"training failed: {out}")
    return out


def summarize(dataset: Path, run: Path) -> dict:
    ck = checkpoint.load(run / "final.sgsc")
    cloud, mlps, cfg = checkpoint.restore(ck)
    row = {"config_id": cfg.config_id, "window": cfg.window,
           **json.loads((run / "run_summary.json").read_text())}
    for split in ("random-pose", "holdout"):
        frames, _ = datagen.load_split(datagen.split_dir(dataset, split))
        rep = evaluate(cloud, mlps, frames, cfg.pathway, ck.state["scene_radius"], split,
                       cfg.sun_kappa)
        row[split] = rep.aggregate
    s = cloud.scales
    row["anisotropy"] = float(np.mean(s.max(axis=1) / s.min(axis=1)))
    row["iso_loss"] = float(losses.isotropic_loss(s)[0])
    return row


def table(rows: list[dict], key: str) -> str:
    head = (f"| {key} | eval PSNR | eval SSIM | eval PSNR (mask) | holdout PSNR | "
            f"Gaussians | anisotropy | steps/s |")
    lines = [head, "|" + "---|" * 8]
    for r in rows:
        ev, ho = r["random-pose"], r["holdout"]
        lines.append(f"| {r[key]} | {ev['psnr']:.2f} | {ev['ssim']:.4f} | {ev['psnr_masked']:.2f} | "
                     f"{ho['psnr']:.2f} | {r['gaussian_count']} | {r['anisotropy']:.2f} | "
                     f"{r['steps_per_sec']:.2f} |")
    return "\n".join(lines)
