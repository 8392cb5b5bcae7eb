"""Every CLI stage on a desk-sized simulation, twice, then a byte comparison.

    python3 scripts/desk_pipeline.py --out-dir runs/desk
"""

import argparse
import filecmp
import json
from pathlib import Path

from deepgwas import cli

CONFIG = Path(__file__).with_name("configs") / "desk.json"
STAGES = ("simulate", "train-grid", "replicate", "evaluate", "gwas", "miami")


def run(out: Path, config: Path, seed: int, threads: int) -> None:
    for stage in STAGES:
        code = cli.main([stage, "--config", str(config), "--out-dir", str(out), "--seed", str(seed), "--threads", str(threads)])
        if code:
            raise SystemExit(f"{stage} exited with {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, required=True)
    ap.add_argument("--config", type=Path, default=CONFIG)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    first, second = args.out_dir / "first", args.out_dir / "second"
    run(first, args.config, args.seed, args.threads)
    run(second, args.config, args.seed, args.threads)

    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    differing = [str(f) for f in files if not filecmp.cmp(first / f, second / f, shallow=False)]
    recall = json.loads((first / "recall.json").read_text())
    print(json.dumps({"files": len(files), "differing": differing, "per_setting": recall["per_setting"]}, indent=1))
    print("plots:", *sorted(str(p) for p in (first / "miami").rglob("*.svg")), sep="\n  ")


if __name__ == "__main__":
    main()
