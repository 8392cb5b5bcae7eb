"""Recall of the ten causal SNPs among the top-10 DeepLIFT scores.

Default: the 10,000 x 10,000 protocol with the reference best configuration
per sparsity setting (hours on one core). ``--grid`` runs the architecture /
L1 search first instead. ``--profile ci`` is the 2,000 x 2,000 reduced run.

    python3 scripts/reproduce_recall.py --out-dir runs/recall --threads 8
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from deepgwas import pipeline

PROFILES = {
    "full": {"a_values": [0.01, 0.1, 0.5, 1.0], "n_datasets": 5, "n_samples": 10_000, "n_snps": 10_000},
    "ci": {"a_values": [0.5], "n_datasets": 2, "n_samples": 2000, "n_snps": 2000},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, required=True)
    ap.add_argument("--profile", choices=sorted(PROFILES), default="full")
    ap.add_argument("--a", type=float, nargs="*", help="restrict to these sparsity values")
    ap.add_argument("--seeds", type=int, nargs="*", default=[5, 6, 7, 8, 9], help="replication seeds")
    ap.add_argument("--grid", action="store_true", help="select architecture and L1 by validation log-likelihood")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    sim = dict(PROFILES[args.profile])
    if args.a:
        sim["a_values"] = args.a
    if args.profile == "ci":
        args.seeds = args.seeds[:2]
    raw = {"simulation": sim, "replication_seeds": args.seeds}
    if not args.grid:
        raw["winners"] = {
            f"a={a:g}": {"arch": list(pipeline.REFERENCE_WINNERS[a][0]), "l1": pipeline.REFERENCE_WINNERS[a][1]}
            for a in sim["a_values"]
        }
    cfg = pipeline.ExperimentConfig.from_dict(raw)

    start = time.perf_counter()
    pipeline.cmd_simulate(cfg, args.out_dir, args.seed)
    if args.grid:
        pipeline.cmd_train_grid(cfg, args.out_dir, args.seed, args.threads)
    pipeline.cmd_replicate(cfg, args.out_dir, args.seed, args.threads)
    report = pipeline.cmd_evaluate(cfg, args.out_dir)
    elapsed = time.perf_counter() - start

    def over(group, d):
        return float(np.mean([v for k, v in d.items() if k.startswith(group + "/")]))

    print(f"{'setting':<10}{'mean':>7}{'sd':>7}{'pooled':>8}{'union':>7}  runs")
    for group, mean in sorted(report.per_setting.items()):
        runs = [r["recall"] for r in report.runs if r["dataset"].startswith(group + "/")]
        print(f"{group:<10}{mean:>7.2f}{np.std(runs):>7.2f}{over(group, report.pooled):>8.2f}{over(group, report.union):>7.2f}  {len(runs)}")
    print(f"elapsed {elapsed / 60:.1f} min")
    summary = {"per_setting": report.per_setting, "pooled": report.pooled, "union": report.union, "elapsed_s": elapsed}
    (args.out_dir / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
