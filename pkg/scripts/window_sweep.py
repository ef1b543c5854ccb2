"""Keyframe-window size sweep under config d.

    python scripts/window_sweep.py --work runs/window [--windows 5 10 20]
"""
import argparse
import json
from pathlib import Path

from _common import ensure_dataset, summarize, table, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--work", type=Path, default=Path("runs/window"))
    ap.add_argument("--dataset", type=Path)
    ap.add_argument("--windows", nargs="+", type=int, default=[5, 10, 20])
    ap.add_argument("--config", default="d", choices=list("abcd"))
    args = ap.parse_args()

    ds = ensure_dataset(args.dataset or args.work / "dataset")
    rows = []
    for w in args.windows:
        run = train(ds, args.work / f"{args.config}-W{w}", config_id=args.config, window=w)
        rows.append(summarize(ds, run))
        print(f"W={w}: eval PSNR {rows[-1]['random-pose']['psnr']:.2f} dB", flush=True)
    (args.work / "window_sweep.json").write_text(json.dumps(rows, indent=2))
    print(table(rows, "window"))


if __name__ == "__main__":
    main()
