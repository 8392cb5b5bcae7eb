"""Command-line entry point: ``deepgwas <subcommand> --config cfg.json``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import ConfigError, DataError, DeepGwasError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_OTHER = 0, 2, 3, 1


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out-dir", default=".", help="experiment directory (default: cwd)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for training jobs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepgwas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "write simulated genotype/phenotype bundles"),
        ("train-grid", "grid-search architectures and L1 penalties"),
        ("replicate", "retrain winners with replication seeds and attribute"),
        ("evaluate", "top-k recall of causal SNPs"),
        ("gwas", "per-SNP association scan"),
        ("miami", "Miami plot of scan vs attribution scores"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "evaluate":
            p.add_argument("--k", type=int, default=None, help="top-k cutoff (default: config top_k)")
    return parser


def _summary(command: str, result) -> dict:
    if command == "simulate":
        return {"datasets": [e["key"] for e in result]}
    if command == "train-grid":
        return {g: r.winner for g, r in result.items()}
    if command == "replicate":
        return {k: {"seeds": a.seeds, "union_top": a.union_top()} for k, a in result.items()}
    if command == "evaluate":
        return {"per_setting": result.per_setting, "union": result.union}
    if command == "gwas":
        return {k: {"n_snps": len(r.snp_ids)} for k, r in result.items()}
    return {"written": [str(p) for p in result]}


def run(args: argparse.Namespace):
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    cfg = pipeline.ExperimentConfig.load(args.config)
    out = args.out_dir
    if args.command == "simulate":
        return pipeline.cmd_simulate(cfg, out, args.seed)
    if args.command == "train-grid":
        return pipeline.cmd_train_grid(cfg, out, args.seed, args.threads)
    if args.command == "replicate":
        return pipeline.cmd_replicate(cfg, out, args.seed, args.threads)
    if args.command == "evaluate":
        return pipeline.cmd_evaluate(cfg, out, args.k)
    if args.command == "gwas":
        return pipeline.cmd_gwas(cfg, out, args.threads)
    return pipeline.cmd_miami(cfg, out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DeepGwasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    print(json.dumps(_summary(args.command, result), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
