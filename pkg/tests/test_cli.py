import hashlib
import json

import numpy as np
import pytest

from sunsplat import checkpoint
from sunsplat.cli import main

TRAJ = {"n_frames": 30, "n_eval": 3, "n_holdout": 3, "width": 24, "height": 24, "focal": 30}
RUN = {"config_id": "c", "window": 4, "n_init": 150, "densify_every": 2, "tau_grad": 2e-3}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert main(["generate", "--config", write_json(root / "traj.json", TRAJ), "--out", str(ds),
                 "--seed", "2"]) == 0
    run_cfg = write_json(root / "run.json", RUN)
    assert main(["train", str(ds), run_cfg, "--out", str(root / "run")]) == 0
    return root, ds, run_cfg


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_generate_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_generate_rejects_unknown_trajectory_field(tmp_path):
    cfg = write_json(tmp_path / "t.json", {"n_frame": 3})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "d")]) == 2


def test_train_rejects_bad_config_before_touching_data(tmp_path, capsys):
    cfg = write_json(tmp_path / "r.json", {"config_id": "e"})
    assert main(["train", str(tmp_path / "missing"), cfg, "--out", str(tmp_path / "o")]) == 2
    assert "config_id" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_train_writes_log_checkpoint_and_summary(workspace):
    root, _, _ = workspace
    run = root / "run"
    log = [json.loads(line) for line in (run / "train_log.jsonl").read_text().splitlines()]
    summary = json.loads((run / "run_summary.json").read_text())
    ck = checkpoint.load(run / "final.sgsc")
    assert len(log) == summary["steps"] == ck.state["step"] > 0
    assert [r["round"] for r in log] == sorted(r["round"] for r in log)
    assert summary["gaussian_count"] == ck.state["gaussian_count"] == len(ck.arrays["means"])
    assert summary["steps_per_sec"] > 0


def test_resume_continues_the_round_counter(workspace, tmp_path):
    root, ds, run_cfg = workspace
    short = write_json(tmp_path / "short.json", {**RUN, "max_frames": 15})
    assert main(["train", str(ds), short, "--out", str(tmp_path / "a")]) == 0
    first = checkpoint.load(tmp_path / "a" / "final.sgsc").state
    assert main(["train", str(ds), short, "--out", str(tmp_path / "a"),
                 "--resume", str(tmp_path / "a" / "final.sgsc")]) == 0
    # nothing left to consume under the same frame cap: counters unchanged
    again = checkpoint.load(tmp_path / "a" / "final.sgsc").state
    assert again["round"] == first["round"] and again["frames_consumed"] == 15
    assert main(["train", str(ds), run_cfg, "--out", str(tmp_path / "a"),
                 "--resume", str(tmp_path / "a" / "final.sgsc")]) == 2


def test_resume_then_finish_matches_full_round_count(workspace, tmp_path):
    root, ds, run_cfg = workspace
    from sunsplat import datagen, trainer
    frames, man = datagen.load_split(ds)
    cfg = checkpoint.restore(checkpoint.load(root / "run" / "final.sgsc"))[2]
    mesh = datagen.TargetMesh.load(ds / "mesh.npz")
    pts, _ = datagen.sample_surface(mesh, cfg.n_init, np.random.default_rng(cfg.seed))
    trainer.run_training(frames[:15], cfg, pts, man["scene_radius"], out_dir=tmp_path)
    assert main(["train", str(ds), run_cfg, "--out", str(tmp_path),
                 "--resume", str(tmp_path / "final.sgsc")]) == 0
    done = checkpoint.load(tmp_path / "final.sgsc").state
    full = checkpoint.load(root / "run" / "final.sgsc").state
    assert done["round"] == full["round"] and done["step"] == full["step"]
    log = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == full["step"]


def test_render_side_by_side_and_shadow_debug(workspace, tmp_path, capsys):
    root, ds, _ = workspace
    ck = str(root / "run" / "final.sgsc")
    args = ["render", ck, "--dataset", str(ds), "--split", "holdout", "--side-by-side",
            "--shadow-debug", "--out", str(tmp_path / "r1")]
    assert main(args) == 0
    files = json.loads(capsys.readouterr().out)["files"]
    ids = [int(f[7:12]) for f in files if f.startswith("render_")]
    assert len(ids) == 3
    for i in ids:
        for stem in ("render", "compare", "shadow"):
            assert (tmp_path / "r1" / f"{stem}_{i:05d}.png").is_file()
        vis = np.load(tmp_path / "r1" / f"visibility_{i:05d}.npz")
        assert np.all((vis["V"] >= 0) & (vis["V"] <= 1))
        ok = ~np.isnan(vis["V_refined"])
        assert np.all((vis["V_refined"][ok] > 0) & (vis["V_refined"][ok] < 1))
    # rendering is deterministic
    args[-1] = str(tmp_path / "r2")
    assert main(args) == 0
    for i in ids:
        name = f"render_{i:05d}.png"
        assert sha(tmp_path / "r1" / name) == sha(tmp_path / "r2" / name)


def test_render_from_view_file(workspace, tmp_path):
    root, _, _ = workspace
    doc = {"intrinsics": {"fx": 30, "fy": 30, "cx": 12, "cy": 12, "width": 24, "height": 24},
            "views": [{"q_obj2cam": [1, 0, 0, 0], "t_obj2cam": [0, 0, 5], "sun_obj": [0, 0, -1]}]}
    views = write_json(tmp_path / "views.json", doc)
    assert main(["render", str(root / "run" / "final.sgsc"), "--views", views,
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "render_00000.png").is_file()
    bad = write_json(tmp_path / "bad.json", {"views": []})
    assert main(["render", str(root / "run" / "final.sgsc"), "--views", bad]) == 2


def test_eval_report(workspace, tmp_path, capsys):
    root, ds, _ = workspace
    ck = str(root / "run" / "final.sgsc")
    docs = {}
    for split in ("train-window", "holdout", "random-pose"):
        assert main(["eval", ck, str(ds), "--split", split, "--json", "--out", str(tmp_path)]) == 0
        docs[split] = json.loads(capsys.readouterr().out)
        assert (tmp_path / f"eval_{split}.json").is_file()
    for doc in docs.values():
        rows = doc["rows"]
        for key in ("psnr", "ssim", "psnr_masked", "ssim_masked"):
            assert doc["aggregate"][key] == pytest.approx(np.mean([r[key] for r in rows]), abs=1e-9)
        assert doc["steps_per_sec"] > 0
        assert doc["gaussian_count"] > 0
    assert len(docs["train-window"]["rows"]) == RUN["window"]


def test_eval_table_output(workspace, capsys):
    root, ds, _ = workspace
    assert main(["eval", str(root / "run" / "final.sgsc"), str(ds), "--split", "holdout"]) == 0
    out = capsys.readouterr().out
    assert "PSNR" in out and "steps/s" in out


def test_eval_empty_split_fails(workspace, tmp_path):
    root, ds, _ = workspace
    empty = tmp_path / "ds"
    empty.mkdir()
    (empty / "holdout").mkdir()
    man = json.loads((ds / "holdout" / "manifest.json").read_text())
    man["frames"] = []
    (empty / "holdout" / "manifest.json").write_text(json.dumps(man))
    assert main(["eval", str(root / "run" / "final.sgsc"), str(empty), "--split", "holdout"]) == 1


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert sum(line.startswith("PASS") for line in out.splitlines()) >= 6
    assert len(json.loads((tmp_path / "gradcheck.json").read_text())) >= 6
    assert main(["gradcheck", "--suite", "losses", "--corrupt", "losses"]) == 1
    assert main(["gradcheck", "--suite", "nonexistent"]) == 2
