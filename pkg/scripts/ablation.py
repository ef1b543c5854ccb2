"""Train configs a-d on the desk-scale dataset and tabulate eval metrics.

    python scripts/ablation.py --work runs/ablation [--configs a b c d]
"""
import argparse
import json
from pathlib import Path

from _common import ensure_dataset, summarize, table, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--work", type=Path, default=Path("runs/ablation"))
    ap.add_argument("--dataset", type=Path, help="existing dataset (generated under --work otherwise)")
    ap.add_argument("--configs", nargs="+", default=list("abcd"), choices=list("abcd"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = ensure_dataset(args.dataset or args.work / "dataset")
    rows = []
    for cid in args.configs:
        run = train(ds, args.work / cid, config_id=cid, seed=args.seed)
        rows.append(summarize(ds, run))
        print(f"config {cid}: eval PSNR {rows[-1]['random-pose']['psnr']:.2f} dB", flush=True)
    (args.work / "ablation.json").write_text(json.dumps(rows, indent=2))
    print(table(rows, "config_id"))


if __name__ == "__main__":
    main()
