"""Command-line entry points: generate, train, render, eval, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("sunsplat")


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{p}: invalid JSON: {e}") from e


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    import numba
    if n < 1:
        raise UsageError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _save_png(path: Path, img: np.ndarray) -> None:
    from PIL import Image
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def error_heat(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-pixel mean |error| mapped black → red → yellow → white."""
    e = np.clip(np.abs(pred - gt).mean(axis=-1) * 3.0, 0.0, 1.0)
    return np.stack([np.clip(3 * e, 0, 1), np.clip(3 * e - 1, 0, 1), np.clip(3 * e - 2, 0, 1)], -1)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate(args) -> int:
    from . import datagen
    cfg = datagen.TrajectoryConfig()
    if args.config:
        try:
            cfg = datagen.TrajectoryConfig.from_dict(_read_json(args.config))
        except (TypeError, ValueError) as e:
            raise UsageError(f"invalid trajectory config: {e}") from e
    out = Path(args.out)
    datagen.generate_dataset(out, cfg, seed=args.seed or 0)
    print(json.dumps({"dataset": str(out), "digest": datagen.dataset_digest(out)}))
    return 0


def _load_run_config(path, seed):
    from .config import ConfigError, RunConfig
    try:
        cfg = RunConfig.from_dict(_read_json(path))
    except ConfigError as e:
        raise UsageError(str(e)) from e
    if seed is not None:
        cfg.seed = seed
    return cfg


def cmd_train(args) -> int:
    from . import checkpoint, datagen, trainer
    cfg = _load_run_config(args.run_config, args.seed)
    if not args.out:
        raise UsageError("train requires --out")
    frames, manifest = datagen.load_split(args.dataset)
    if args.resume:
        state = trainer.resume_state(checkpoint.load(args.resume), frames)
        if state.config.to_dict() != cfg.to_dict():
            raise UsageError("run config differs from the one stored in the checkpoint")
        points = None
    else:
        state = None
        mesh = datagen.TargetMesh.load(Path(args.dataset) / "mesh.npz")
        points, _ = datagen.sample_surface(mesh, cfg.n_init, np.random.default_rng(cfg.seed))
    res = trainer.run_training(frames, cfg, points, float(manifest["scene_radius"]),
                               out_dir=args.out, state=state)
    print(json.dumps({"config_id": cfg.config_id, "rounds": res.state.round,
                      "steps": res.state.step, "gaussian_count": len(res.state.cloud),
                      "steps_per_sec": res.steps_per_sec,
                      "checkpoint": str(Path(args.out) / "final.sgsc")}))
    return 0


def _frames_for_split(dataset, split: str, ckpt):
    from . import datagen
    frames, _ = datagen.load_split(datagen.split_dir(dataset, split))
    if split == "train-window":
        keep = set(ckpt.state.get("window_ids", []))
        frames = [f for f in frames if f.frame_id in keep]
    return frames


def _views_from_file(path):
    """Frames (without ground truth) from a JSON view file:
    ``{"intrinsics": {...}, "views": [{"q_obj2cam", "t_obj2cam", "sun_obj"}, ...]}``."""
    from . import geom
    from .datagen import FrameRecord
    doc = _read_json(path)
    try:
        K = geom.Pinhole(**doc["intrinsics"])
        out = []
        for i, v in enumerate(doc["views"]):
            sun = np.asarray(v["sun_obj"], dtype=np.float64)
            T = geom.RigidTransform(np.asarray(v["q_obj2cam"], dtype=np.float64),
                                    np.asarray(v["t_obj2cam"], dtype=np.float64))
            out.append(FrameRecord(v.get("id", i), T, sun / np.linalg.norm(sun), K, None, None))
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"invalid view file: {e}") from e
    return out


def cmd_render(args) -> int:
    from . import checkpoint
    from .evaluate import render_frame
    ckpt = checkpoint.load(args.checkpoint)
    cloud, mlps, cfg = checkpoint.restore(ckpt)
    if args.views:
        frames = _views_from_file(args.views)
    elif args.dataset:
        frames = _frames_for_split(args.dataset, args.split, ckpt)
    else:
        raise UsageError("render needs --dataset or --views")
    if args.frames:
        wanted = {int(x) for x in args.frames.split(",")}
        frames = [f for f in frames if f.frame_id in wanted]
    if not frames:
        raise RuntimeError("no frames selected")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for f in frames:
        fr = render_frame(cloud, mlps, f, cfg.pathway, ckpt.state["scene_radius"], cfg.sun_kappa)
        img = np.clip(fr.image, 0, 1)
        name = f"{f.frame_id:05d}"
        _save_png(out / f"render_{name}.png", img)
        written.append(f"render_{name}.png")
        if args.side_by_side and f.image is not None:
            _save_png(out / f"compare_{name}.png",
                      np.concatenate([f.image, img, error_heat(img, f.image)], axis=1))
            written.append(f"compare_{name}.png")
        if args.shadow_debug:
            if fr.shadow is None:
                raise UsageError(f"config ({cfg.config_id}) has no shadow pathway")
            vp = np.full(len(cloud), np.nan)
            vp[fr.frame.ids] = fr.Vp
            np.savez(out / f"visibility_{name}.npz", V=fr.V, V_refined=vp, ids=fr.frame.ids)
            _save_png(out / f"shadow_{name}.png", fr.shadow)
            written += [f"visibility_{name}.npz", f"shadow_{name}.png"]
    print(json.dumps({"out": str(out), "files": written}))
    return 0


def cmd_eval(args) -> int:
    from . import checkpoint
    from .evaluate import evaluate
    ckpt = checkpoint.load(args.checkpoint)
    cloud, mlps, cfg = checkpoint.restore(ckpt)
    frames = _frames_for_split(args.dataset, args.split, ckpt)
    if not frames:
        raise RuntimeError(f"split '{args.split}' is empty")
    rep = evaluate(cloud, mlps, frames, cfg.pathway, ckpt.state["scene_radius"], args.split,
                   cfg.sun_kappa)
    summary = Path(args.checkpoint).with_name("run_summary.json")
    if summary.is_file():
        rep.steps_per_sec = json.loads(summary.read_text()).get("steps_per_sec")
    doc = {"config_id": cfg.config_id, **rep.to_dict()}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{args.split}.json").write_text(json.dumps(doc, indent=2))
    if args.json:
        print(json.dumps(doc))
    else:
        print(rep.table())
        if rep.steps_per_sec is not None:
            print(f"training throughput: {rep.steps_per_sec:.2f} steps/s")
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck
    try:
        results = []
        for r in range(args.repeats):
            results += gradcheck.run_all((args.seed or 0) + r, args.suite, args.corrupt)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from e
    worst: dict[str, gradcheck.SuiteResult] = {}
    for res in results:
        cur = worst.get(res.name)
        if cur is None or not res.passed or (cur.passed and res.max_rel_err > cur.max_rel_err):
            worst[res.name] = res
    for res in worst.values():
        print(res.line())
    failed = [n for n, r in worst.items() if not r.passed]
    print(f"{len(worst) - len(failed)}/{len(worst)} suites passed")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "gradcheck.json").write_text(json.dumps(
            [vars(r) for r in worst.values()], indent=2))
    return 1 if failed else 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=None, help="cap on kernel worker threads")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sunsplat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--config", help="trajectory config JSON (defaults if omitted)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train under one run config")
    t.add_argument("dataset")
    t.add_argument("run_config")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", parents=[common], help="render views from a checkpoint")
    r.add_argument("checkpoint")
    r.add_argument("--dataset")
    r.add_argument("--split", default="holdout",
                   choices=["train", "train-window", "holdout", "random-pose"])
    r.add_argument("--views", help="JSON view file instead of a dataset split")
    r.add_argument("--frames", help="comma-separated frame ids")
    r.add_argument("--side-by-side", action="store_true", help="ground truth | render | error")
    r.add_argument("--shadow-debug", action="store_true", help="dump V, V′ and the shadow image")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", parents=[common], help="PSNR/SSIM report on a split")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--split", default="random-pose", choices=["train-window", "holdout", "random-pose"])
    e.add_argument("--json", action="store_true", help="print JSON instead of the table")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    c.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    c.add_argument("--repeats", type=int, default=1, help="seeded instances per suite")
    c.add_argument("--corrupt", help="negative control: perturb this suite's analytic gradient")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .checkpoint import VersionMismatch
    try:
        _set_threads(args.threads)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except VersionMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
