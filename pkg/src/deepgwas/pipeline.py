"""Experiment orchestration: simulate, grid-search, replicate, evaluate, scan, plot.

Every stage reads and writes inside one experiment directory::

    datasets/index.json            dataset keys -> bundle paths
    datasets/<key>/                GWDL matrix, phenotype TSV, truth manifest
    selection/<group>.json         per-cell mean validation log-likelihood
    selection/winners.json         winning (architecture, l1) per group
    scores/<key>/seed_<s>.tsv      per-seed mean |DeepLIFT|
    scores/<key>/aggregate.tsv     pooled scores + selection frequency
    scores/<key>/runs.json         per-seed training / validation metadata
    recall.json, recall.tsv        top-k recall against simulation truth
    gwas/<key>.tsv                 association scan
    miami/<key>.svg, .merged.tsv   Miami plot and its data

A dataset key looks like ``a=0.5/d0``; its group (``a=0.5``) is the unit of
model selection. Seeds for datasets and trainings derive from one master seed.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import assoc, attribute, miami
from .errors import ConfigError, DataError, TrainingError
from .genotype import (
    GenotypeMatrix,
    PhenotypeTable,
    dense_dosages,
    filter_variants,
    load_matrix,
    load_phenotypes,
    read_tsv_columns,
    write_atomic,
)
from .neural import TrainConfig, init_model, split_indices, train, validation_loglik
from .rng import derive_seed
from .simulate import GENOTYPE_FILE, PHENOTYPE_FILE, TRUTH_FILE, SimConfig, load_truth, make_benchmark

log = logging.getLogger(__name__)

DEFAULT_ARCHS = ((64, 128), (64, 256), (128, 128), (128, 256))
DEFAULT_L1_GRID = (0.01, 0.1, 1.0, 10.0)
# best configuration per population-sparsity setting reported for the 10k x 10k simulations
REFERENCE_WINNERS = {0.01: ((64, 256), 1.0), 0.1: ((128, 256), 1.0), 0.5: ((128, 256), 1.0), 1.0: ((64, 256), 1.0)}


@dataclass
class ExperimentConfig:
    simulation: dict | None = None
    datasets: list[dict] = field(default_factory=list)
    architectures: list[tuple[int, ...]] = field(default_factory=lambda: [tuple(a) for a in DEFAULT_ARCHS])
    l1_grid: list[float] = field(default_factory=lambda: list(DEFAULT_L1_GRID))
    selection_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    replication_seeds: list[int] = field(default_factory=lambda: [5, 6, 7, 8, 9])
    split: tuple[float, float, float] = (0.5, 0.25, 0.25)
    # "seed": each training seed draws its own split of the dataset (shared by
    # every grid cell with that seed); "dataset": one split for all seeds
    split_by: str = "seed"
    target: str = "logit"
    top_k: int = 10
    train: dict = field(default_factory=dict)
    winners: dict = field(default_factory=dict)
    gwas: dict = field(default_factory=dict)
    miami: dict = field(default_factory=dict)

    def __post_init__(self):
        self.architectures = [tuple(int(h) for h in a) for a in self.architectures]
        self.l1_grid = [float(v) for v in self.l1_grid]
        self.split = tuple(float(f) for f in self.split)
        if not self.architectures or not self.l1_grid:
            raise ConfigError("architecture and l1 grids must be non-empty")
        if any(len(a) == 0 or min(a) < 1 for a in self.architectures):
            raise ConfigError(f"invalid architecture in {self.architectures}")
        if set(self.selection_seeds) & set(self.replication_seeds):
            raise ConfigError("replication seeds must be disjoint from selection seeds")
        if self.split_by not in ("seed", "dataset"):
            raise ConfigError(f"split_by must be 'seed' or 'dataset', got {self.split_by!r}")
        if self.target not in ("logit", "output"):
            raise ConfigError(f"target must be 'logit' or 'output', got {self.target!r}")
        if self.top_k < 1:
            raise ConfigError("top_k must be positive")
        if self.simulation is not None:
            sim = self.simulation
            for a in sim.get("a_values", []):
                if not float(a) > 0:
                    raise ConfigError(f"sparsity a must be > 0, got {a}")
        self.train_config(0, 0)  # validates training keys early

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def train_config(self, seed: int, split_seed: int, l1: float = 0.0) -> TrainConfig:
        allowed = {"learning_rate", "batch_size", "max_epochs", "patience", "l1_scale", "center_inputs"}
        extra = set(self.train) - allowed
        if extra:
            raise ConfigError(f"unknown train keys: {sorted(extra)}")
        try:
            return TrainConfig(l1_coeff=l1, seed=seed, split=self.split, split_seed=split_seed, **self.train)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _group_key(a: float) -> str:
    return f"a={a:g}"


# --- datasets -----------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out_dir, master_seed: int = 0) -> list[dict]:
    """Write one bundle per (a, replicate) and an index of them."""
    sim = cfg.simulation
    if not sim:
        raise ConfigError("config has no 'simulation' section")
    out = Path(out_dir)
    entries = []
    for a in sim.get("a_values", [0.01, 0.1, 0.5, 1.0]):
        a = float(a)
        for i in range(int(sim.get("n_datasets", 5))):
            seed = derive_seed(master_seed, f"dataset:{_group_key(a)}", i)
            sc = SimConfig(
                n_samples=int(sim.get("n_samples", 10_000)),
                n_snps=int(sim.get("n_snps", 10_000)),
                a=a,
                n_causal=int(sim.get("n_causal", 10)),
                seed=seed,
                causal_placement=sim.get("causal_placement", "first"),
            )
            key = f"{_group_key(a)}/d{i}"
            log.info("simulating %s (seed %d)", key, seed)
            make_benchmark(sc, out / "datasets" / key)
            entries.append({"key": key, "group": _group_key(a), "a": a, "seed": seed, "path": f"datasets/{key}"})
    write_atomic(out / "datasets" / "index.json", _dump(entries))
    return entries


def dataset_index(cfg: ExperimentConfig, out_dir) -> list[dict]:
    """Datasets named explicitly in the config, else the simulated index."""
    if cfg.datasets:
        entries = []
        for d in cfg.datasets:
            if "key" not in d or "genotypes" not in d or "phenotypes" not in d:
                raise ConfigError("each dataset needs 'key', 'genotypes' and 'phenotypes'")
            entries.append({"group": d.get("group", d["key"]), "split_seed": d.get("split_seed", 0), **d})
        return entries
    path = Path(out_dir) / "datasets" / "index.json"
    if not path.exists():
        raise DataError(f"{path} not found; run `simulate` first or list datasets in the config")
    return json.loads(path.read_text())


@dataclass
class Dataset:
    key: str
    genotypes: GenotypeMatrix
    phenotypes: PhenotypeTable
    split_seed: int
    truth: dict | None = None

    def dosages(self):
        return dense_dosages(self.genotypes)


def _resolve(out_dir, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(out_dir) / p


def load_dataset(entry: dict, out_dir, trait_kind: str | None = None) -> Dataset:
    if "path" in entry:
        root = _resolve(out_dir, entry["path"])
        geno_path, pheno_path = root / GENOTYPE_FILE, root / PHENOTYPE_FILE
        truth = load_truth(root / TRUTH_FILE) if (root / TRUTH_FILE).exists() else None
    else:
        geno_path, pheno_path = _resolve(out_dir, entry["genotypes"]), _resolve(out_dir, entry["phenotypes"])
        truth = load_truth(_resolve(out_dir, entry["truth"])) if entry.get("truth") else None
    g = load_matrix(geno_path)
    p = load_phenotypes(pheno_path, trait_col=entry.get("trait_col", "trait"), trait_kind=trait_kind or entry.get("trait_kind"))
    if entry.get("covariates"):
        p = _attach_covariates(p, _resolve(out_dir, entry["covariates"]))
    p = p.align_to(g.sample_ids)
    return Dataset(entry["key"], g, p, int(entry.get("split_seed", entry.get("seed", 0))), truth)


def _attach_covariates(p: PhenotypeTable, path) -> PhenotypeTable:
    header, cols = read_tsv_columns(path)
    if "sample_id" not in cols:
        raise DataError(f"{path}: missing required column 'sample_id'")
    pos = {s: i for i, s in enumerate(cols["sample_id"])}
    absent = [s for s in p.sample_ids if s not in pos]
    if absent:
        raise DataError(f"{path}: no covariates for {len(absent)} samples, e.g. {absent[:5]}")
    names = [h for h in header if h != "sample_id" and h not in p.covariate_names]
    try:
        extra = np.array([[float(cols[c][pos[s]]) for c in names] for s in p.sample_ids]).reshape(len(p.sample_ids), len(names))
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric covariate ({exc})") from None
    return PhenotypeTable(
        p.sample_ids, p.trait, p.trait_kind, np.column_stack([p.covariates, extra]), p.covariate_names + names
    )


# --- training jobs ----------------------------------------------------------------------

_DATA_CACHE: dict[tuple[str, str], tuple] = {}


def _cached(entry: dict, out_dir: str):
    key = (str(out_dir), entry["key"])
    if key not in _DATA_CACHE:
        _DATA_CACHE.clear()
        ds = load_dataset(entry, out_dir)
        _DATA_CACHE[key] = (ds, ds.dosages())
    return _DATA_CACHE[key]


def _train_job(job: dict) -> dict:
    """Train one (dataset, architecture, l1, seed) cell; optionally attribute."""
    ds, x = _cached(job["entry"], job["out_dir"])
    y = ds.phenotypes.trait
    tc = TrainConfig(**job["train_config"])
    tr, st, va = split_indices(len(y), tc.split, tc.split_seed)
    head = "sigmoid-binary" if ds.phenotypes.trait_kind == "binary" else "identity-regression"
    result = {"key": ds.key, "arch": list(job["arch"]), "l1": tc.l1_coeff, "seed": job["seed"]}
    try:
        model = init_model(job["arch"], x.shape[1], tc.seed, head)
        model, history = train(model, x, y, tc, tr, st)
        result["val_loglik"] = validation_loglik(model, x[va], y[va])
        result["best_epoch"] = model.train_meta["best_epoch"]
        result["epochs_run"] = model.train_meta["epochs_run"]
        result["n_params"] = model.n_params
    except TrainingError as exc:
        result["error"] = str(exc)
        return result
    if job.get("attribute"):
        ref = attribute.compute_reference(ds.genotypes)
        summary = attribute.summarize(attribute.attribute_split(model, x, va, ref, job["target"]), seed=job["seed"])
        result["mean_abs"] = summary.mean_abs
        result["n_attributed"] = summary.n_samples
    return result


def _run_jobs(jobs: list[dict], threads: int) -> list[dict]:
    if threads <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_train_job, jobs))


def _job(entry, out_dir, cfg: ExperimentConfig, master_seed: int, arch, l1: float, seed: int, attribute_after: bool) -> dict:
    split_seed = int(entry.get("split_seed", entry.get("seed", 0)))
    if cfg.split_by == "seed":
        split_seed = derive_seed(split_seed, "split", seed)
    tc = cfg.train_config(derive_seed(master_seed, "train", seed), split_seed, l1)
    return {
        "entry": entry,
        "out_dir": str(out_dir),
        "arch": tuple(arch),
        "seed": seed,
        "train_config": asdict(tc),
        "attribute": attribute_after,
        "target": cfg.target,
    }


@dataclass
class SelectionReport:
    group: str
    cells: list[dict]
    winner: dict | None

    def to_json(self) -> dict:
        return {"group": self.group, "cells": self.cells, "winner": self.winner}


def select_winner(cells: list[dict]) -> dict | None:
    """Highest mean validation log-likelihood; ties go to fewer parameters, then lower l1."""
    ok = [c for c in cells if c.get("mean_val_loglik") is not None and math.isfinite(c["mean_val_loglik"])]
    if not ok:
        return None
    best = min(ok, key=lambda c: (-c["mean_val_loglik"], c["n_params"], c["l1"]))
    return {"arch": best["arch"], "l1": best["l1"], "mean_val_loglik": best["mean_val_loglik"]}


def cmd_train_grid(cfg: ExperimentConfig, out_dir, master_seed: int = 0, threads: int = 1) -> dict[str, SelectionReport]:
    """Train every (architecture, l1, selection seed) on every dataset and pick a
    winner per dataset group by mean validation log-likelihood."""
    entries = dataset_index(cfg, out_dir)
    jobs = [
        _job(e, out_dir, cfg, master_seed, arch, l1, s, False)
        for e in entries for arch in cfg.architectures for l1 in cfg.l1_grid for s in cfg.selection_seeds
    ]
    results = _run_jobs(jobs, threads)
    groups: dict[str, list[dict]] = {}
    for e in entries:
        groups.setdefault(e["group"], [])
    for r, job in zip(results, jobs):
        groups[job["entry"]["group"]].append(r)

    reports = {}
    winners = {}
    for group, runs in groups.items():
        cells = []
        for arch in cfg.architectures:
            for l1 in cfg.l1_grid:
                cell_runs = [r for r in runs if tuple(r["arch"]) == tuple(arch) and r["l1"] == l1]
                good = [r["val_loglik"] for r in cell_runs if "val_loglik" in r]
                n_params = next((r["n_params"] for r in cell_runs if "n_params" in r), None)
                cells.append({
                    "arch": list(arch),
                    "l1": l1,
                    "mean_val_loglik": float(np.mean(good)) if good else None,
                    "n_runs": len(good),
                    "n_failed": len(cell_runs) - len(good),
                    "n_params": n_params if n_params is not None else 0,
                    "failures": [r["error"] for r in cell_runs if "error" in r],
                })
        report = SelectionReport(group, cells, select_winner(cells))
        write_atomic(Path(out_dir) / "selection" / f"{group.replace('/', '_')}.json", _dump(report.to_json()))
        reports[group] = report
        if report.winner is not None:
            winners[group] = report.winner
    if not winners:
        raise TrainingError("every grid cell failed; no winner")
    write_atomic(Path(out_dir) / "selection" / "winners.json", _dump(winners))
    return reports


def load_winners(cfg: ExperimentConfig, out_dir) -> dict:
    if cfg.winners:
        return {g: {"arch": list(w["arch"]), "l1": float(w["l1"])} for g, w in cfg.winners.items()}
    path = Path(out_dir) / "selection" / "winners.json"
    if not path.exists():
        raise DataError(f"{path} not found; run `train-grid` first or give 'winners' in the config")
    return json.loads(path.read_text())


def cmd_replicate(cfg: ExperimentConfig, out_dir, master_seed: int = 0, threads: int = 1) -> dict[str, attribute.SeedAggregate]:
    """Retrain each group's winner with the replication seeds, attribute on the
    validation split and write per-seed and aggregate score tables."""
    entries = dataset_index(cfg, out_dir)
    winners = load_winners(cfg, out_dir)
    jobs = []
    for e in entries:
        if e["group"] not in winners:
            raise DataError(f"no winning configuration for group {e['group']!r}")
        w = winners[e["group"]]
        jobs += [_job(e, out_dir, cfg, master_seed, w["arch"], w["l1"], s, True) for s in cfg.replication_seeds]
    results = _run_jobs(jobs, threads)

    out = Path(out_dir)
    aggregates = {}
    for e in entries:
        runs = [r for r, j in zip(results, jobs) if j["entry"]["key"] == e["key"]]
        snp_ids = load_dataset(e, out_dir).genotypes.snp_ids
        summaries = []
        meta = []
        for r in runs:
            info = {k: v for k, v in r.items() if k != "mean_abs"}
            meta.append(info)
            if "mean_abs" not in r:
                log.warning("replicate %s seed %s failed: %s", e["key"], r["seed"], r.get("error"))
                continue
            s = attribute.AttributionSummary(r["mean_abs"], r["n_attributed"], r["seed"])
            summaries.append(s)
            attribute.write_summary(out / "scores" / e["key"] / f"seed_{r['seed']}.tsv", snp_ids, s)
        write_atomic(out / "scores" / e["key"] / "runs.json", _dump(meta))
        if summaries:
            agg = attribute.aggregate_seeds(summaries, cfg.top_k)
            write_atomic(out / "scores" / e["key"] / "aggregate.tsv", attribute.aggregate_tsv(snp_ids, agg))
            aggregates[e["key"]] = agg
    return aggregates


# --- evaluation ---------------------------------------------------------------------------


def recall(top: list[int], causal: list[int]) -> float:
    if not causal:
        raise DataError("recall is undefined for an empty causal set")
    return len(set(top) & set(causal)) / len(causal)


@dataclass
class RecallReport:
    runs: list[dict]
    per_setting: dict[str, float]
    pooled: dict[str, float]
    union: dict[str, float]

    def to_json(self) -> dict:
        return asdict(self)

    def tsv(self) -> str:
        lines = ["dataset\tgroup\tseed\trecall"]
        lines += [f"{r['dataset']}\t{r['group']}\t{r['seed']}\t{r['recall']!r}" for r in self.runs]
        return "\n".join(lines) + "\n"


def cmd_evaluate(cfg: ExperimentConfig, out_dir, k: int | None = None) -> RecallReport:
    """Top-k recall of the causal SNPs, per replicate run and averaged per group."""
    k = cfg.top_k if k is None else k
    entries = dataset_index(cfg, out_dir)
    out = Path(out_dir)
    runs, pooled, union = [], {}, {}
    for e in entries:
        root = _resolve(out_dir, e["path"]) if "path" in e else None
        truth = load_truth(root / TRUTH_FILE) if root else (load_truth(_resolve(out_dir, e["truth"])) if e.get("truth") else None)
        if truth is None:
            raise DataError(f"dataset {e['key']} has no ground-truth manifest")
        causal = truth["causal_indices"]
        score_dir = out / "scores" / e["key"]
        seed_files = sorted(score_dir.glob("seed_*.tsv"), key=lambda p: int(p.stem.split("_")[1]))
        if not seed_files:
            raise DataError(f"no score files in {score_dir}; run `replicate` first")
        summaries = []
        for f in seed_files:
            _, scores = attribute.read_scores(f)
            if k > scores.size:
                raise ConfigError(f"k={k} exceeds the number of SNPs ({scores.size})")
            seed = int(f.stem.split("_")[1])
            summaries.append(attribute.AttributionSummary(scores, 0, seed))
            top = attribute.top_k(scores, k)
            runs.append({"dataset": e["key"], "group": e["group"], "seed": seed, "recall": recall(top, causal), "top": top})
        agg = attribute.aggregate_seeds(summaries, k)
        pooled[e["key"]] = recall(attribute.top_k(agg.pooled_mean, k), causal)
        union[e["key"]] = recall(agg.union_top(), causal)
    per_setting = {}
    for g in dict.fromkeys(r["group"] for r in runs):
        per_setting[g] = float(np.mean([r["recall"] for r in runs if r["group"] == g]))
    report = RecallReport(runs, per_setting, pooled, union)
    write_atomic(out / "recall.json", _dump(report.to_json()))
    write_atomic(out / "recall.tsv", report.tsv())
    return report


# --- association scan and plots ------------------------------------------------------------


def cmd_gwas(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict[str, assoc.AssocResult]:
    """Per-SNP scan for every dataset; covariates default to the simulated
    cluster indicators when present."""
    g_cfg = dict(cfg.gwas)
    trait_kind = g_cfg.get("trait_kind")
    if trait_kind not in (None, "binary", "continuous"):
        raise ConfigError(f"trait_kind must be binary or continuous, got {trait_kind!r}")
    results = {}
    for e in dataset_index(cfg, out_dir):
        ds = load_dataset(e, out_dir, trait_kind=trait_kind)
        pheno = ds.phenotypes
        if g_cfg.get("log_transform"):
            if pheno.trait_kind != "continuous":
                raise ConfigError("log_transform applies to continuous traits only")
            pheno = PhenotypeTable(pheno.sample_ids, assoc.log_transform(pheno.trait, pheno.sample_ids),
                                   "continuous", pheno.covariates, pheno.covariate_names)
        covs = g_cfg.get("covariates")
        if covs is None:
            covs = [c for c in ("cluster_2", "cluster_3") if c in pheno.covariate_names]
        missing = [c for c in covs if c not in pheno.covariate_names]
        if missing:
            raise ConfigError(f"covariates not found for {e['key']}: {missing}")
        genotypes = ds.genotypes
        maf_min, cr_min = float(g_cfg.get("maf_min", 0.0)), float(g_cfg.get("call_rate_min", 0.0))
        if maf_min > 0 or cr_min > 0:
            genotypes, _ = filter_variants(genotypes, maf_min, cr_min)
        res = assoc.scan(genotypes, pheno, assoc.DesignSpec(tuple(covs)), workers=threads)
        assoc.write_scan(Path(out_dir) / "gwas" / f"{e['key']}.tsv", res, float(g_cfg.get("alpha", 0.05)))
        results[e["key"]] = res
    return results


def miami_from_files(scan_path, attribution_path, svg_path, merged_path, k: int = 10, title: str = "") -> miami.MiamiData:
    meta, scan_ids, nl = assoc.read_scan(scan_path)
    score_ids, scores = attribute.read_scores(attribution_path)
    alpha = float(meta.get("bonferroni_alpha", 0.05))
    data = miami.build(scan_ids, nl, score_ids, scores, k=k, alpha=alpha)
    write_atomic(svg_path, miami.render_svg(data, title))
    write_atomic(merged_path, miami.merged_tsv(data))
    return data


def cmd_miami(cfg: ExperimentConfig, out_dir) -> list[Path]:
    """Miami plot per dataset that has both a scan and aggregate scores, or for
    the explicit ``miami.scan`` / ``miami.attribution`` pair in the config."""
    out = Path(out_dir)
    k = int(cfg.miami.get("top_k", cfg.top_k))
    written = []
    if cfg.miami.get("scan"):
        name = cfg.miami.get("name", "miami")
        miami_from_files(_resolve(out, cfg.miami["scan"]), _resolve(out, cfg.miami["attribution"]),
                         out / "miami" / f"{name}.svg", out / "miami" / f"{name}.merged.tsv", k, name)
        return [out / "miami" / f"{name}.svg"]
    for e in dataset_index(cfg, out_dir):
        scan_path = out / "gwas" / f"{e['key']}.tsv"
        agg_path = out / "scores" / e["key"] / "aggregate.tsv"
        if not (scan_path.exists() and agg_path.exists()):
            continue
        svg = out / "miami" / f"{e['key']}.svg"
        miami_from_files(scan_path, agg_path, svg, out / "miami" / f"{e['key']}.merged.tsv", k, e["key"])
        written.append(svg)
    if not written:
        raise DataError("nothing to plot: need gwas/<key>.tsv and scores/<key>/aggregate.tsv")
    return written


def run_all(cfg: ExperimentConfig, out_dir, master_seed: int = 0, threads: int = 1, grid: bool = True) -> dict[str, Any]:
    """simulate -> (train-grid) -> replicate -> evaluate -> gwas -> miami."""
    if cfg.simulation:
        cmd_simulate(cfg, out_dir, master_seed)
    if grid and not cfg.winners:
        cmd_train_grid(cfg, out_dir, master_seed, threads)
    cmd_replicate(cfg, out_dir, master_seed, threads)
    report = cmd_evaluate(cfg, out_dir)
    cmd_gwas(cfg, out_dir, threads)
    cmd_miami(cfg, out_dir)
    return {"recall": report}
