"""Structured genotype and binary-trait simulation.

Genotypes follow a three-factor model: allele frequencies ``pi = gamma @ s``
with ``gamma[:, :2] ~ U(0, 0.5)``, ``gamma[:, 2] = 0.5``, ``s[:2] ~ Beta(a, a)``
and ``s[2] = 1``. Small ``a`` pushes samples towards the corners of the unit
square. Traits are Bernoulli draws through a logistic link from a sparse
additive genetic score plus a cluster-level offset and cluster-specific noise,
where clusters come from 3-means on the columns of ``s``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DataError
from .genotype import GenotypeMatrix, PhenotypeTable, _pack_rows, all_snp_stats, encode_matrix, phenotype_tsv, write_atomic
from .kmeans import kmeans

DEFAULT_A_GRID = (0.01, 0.1, 0.5, 1.0)
N_CLUSTERS = 3


@dataclass(frozen=True)
class SimConfig:
    n_samples: int = 10_000
    n_snps: int = 10_000
    a: float = 0.1
    n_causal: int = 10
    seed: int = 0
    causal_placement: str = "first"  # or "random"

    def __post_init__(self):
        if self.n_samples < N_CLUSTERS:
            raise ConfigError(f"need at least {N_CLUSTERS} samples, got {self.n_samples}")
        if self.n_snps < 1:
            raise ConfigError("n_snps must be positive")
        if not self.a > 0:
            raise ConfigError(f"sparsity a must be > 0, got {self.a}")
        if not 0 <= self.n_causal <= self.n_snps:
            raise ConfigError(f"n_causal={self.n_causal} must lie in [0, n_snps={self.n_snps}]")
        if self.causal_placement not in ("first", "random"):
            raise ConfigError(f"unknown causal_placement {self.causal_placement!r}")


@dataclass
class SimTruth:
    gamma: np.ndarray
    s: np.ndarray
    beta: np.ndarray
    causal_indices: np.ndarray
    lambda_: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    cluster: np.ndarray
    config: SimConfig = field(default_factory=SimConfig)

    @property
    def pi(self) -> np.ndarray:
        """Clamped allele frequencies (M x N); recomputed on access since it is large."""
        return allele_frequencies(self.gamma, self.s)

    def manifest(self) -> dict:
        return {
            "causal_indices": [int(i) for i in self.causal_indices],
            "beta": [float(b) for b in self.beta],
            "lambda": [int(v) for v in self.lambda_],
            "sigma2": [float(v) for v in self.sigma2],
            "tau2": [float(v) for v in self.tau2],
            "cluster": [int(c) for c in self.cluster],
            "config": asdict(self.config),
        }


def sample_factors(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    m, n = cfg.n_snps, cfg.n_samples
    gamma = np.empty((m, 3))
    gamma[:, :2] = rngmod.stream(cfg.seed, "gamma").uniform(0.0, 0.5, size=(m, 2))
    gamma[:, 2] = 0.5
    s = np.empty((3, n))
    s[:2] = rngmod.stream(cfg.seed, "s").beta(cfg.a, cfg.a, size=(2, n))
    s[2] = 1.0
    return gamma, s


def allele_frequencies(gamma: np.ndarray, s: np.ndarray) -> np.ndarray:
    # gamma @ s reaches 1.5 at most; the clamp only ever bites from above.
    return np.clip(gamma @ s, 0.0, 1.0)


def sample_genotypes(gamma: np.ndarray, s: np.ndarray, seed: int, *, return_pi: bool = True):
    """Draw x[m, n] ~ Binomial(2, pi[m, n]) with one random stream per SNP.

    Each draw is the number of two independent uniforms below ``pi``, which is
    exactly Binomial(2, pi). Returns ``(GenotypeMatrix, pi)``; ``pi`` is None
    when ``return_pi`` is false (it is M x N float64).
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if gamma.ndim != 2 or gamma.shape[1] != 3 or s.ndim != 2 or s.shape[0] != 3:
        raise ConfigError(f"expected gamma M x 3 and s 3 x N, got {gamma.shape} and {s.shape}")
    m, n = gamma.shape[0], s.shape[1]
    codes = np.empty((m, n), dtype=np.int8)
    pi_all = np.empty((m, n)) if return_pi else None
    block = max(1, 4_000_000 // max(n, 1))
    for start in range(0, m, block):
        pi = allele_frequencies(gamma[start : start + block], s)
        if return_pi:
            pi_all[start : start + block] = pi
        for r in range(pi.shape[0]):
            u = rngmod.stream(seed, "genotype", start + r).random((2, n))
            codes[start + r] = (u[0] < pi[r]).astype(np.int8) + (u[1] < pi[r])
    snp_ids = tuple(f"snp{j}" for j in range(m))
    sample_ids = tuple(f"s{i}" for i in range(n))
    return GenotypeMatrix(n, m, _pack_rows(codes), snp_ids, sample_ids), pi_all


def kmeans_columns(s: np.ndarray, k: int = N_CLUSTERS, seed: int = 0):
    """Cluster the columns of ``s``; returns (labels in 1..k, centroids k x rows)."""
    labels, centroids, _ = kmeans(np.asarray(s).T, k, rngmod.stream(seed, "kmeans"))
    return labels + 1, centroids


def sample_inverse_gamma(shape: float, scale: float, size, rng: np.random.Generator) -> np.ndarray:
    """InverseGamma(shape, scale) as the reciprocal of Gamma(shape, rate=scale)."""
    return scale / rng.standard_gamma(shape, size=size)


def trait_logits(dosages_causal: np.ndarray, beta_causal: np.ndarray, lambda_: np.ndarray, eps: np.ndarray) -> np.ndarray:
    return np.asarray(dosages_causal, dtype=np.float64) @ np.asarray(beta_causal, dtype=np.float64) + lambda_ + eps


def draw_traits(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))
    return (rng.random(p.shape) < p).astype(np.float64)


def sample_traits(genotypes: GenotypeMatrix, cfg: SimConfig, gamma: np.ndarray, s: np.ndarray, seed: int | None = None):
    """Simulate binary traits and return ``(PhenotypeTable, SimTruth)``.

    The phenotype table carries two cluster-indicator covariates
    (``cluster_2``, ``cluster_3``) as the population-structure adjustment for
    association scans.
    """
    seed = cfg.seed if seed is None else seed
    m, n = genotypes.n_snps, genotypes.n_samples
    if np.any(all_snp_stats(genotypes)["call_rate"] < 1.0):
        raise DataError("trait simulation needs complete genotypes")
    if cfg.causal_placement == "first":
        causal = np.arange(cfg.n_causal, dtype=np.int64)
    else:
        causal = np.sort(rngmod.stream(seed, "causal").choice(m, size=cfg.n_causal, replace=False))
    beta = np.zeros(m)
    beta[causal] = rngmod.stream(seed, "beta").standard_normal(cfg.n_causal)

    cluster, _ = kmeans_columns(s, N_CLUSTERS, seed)
    tau2 = sample_inverse_gamma(3.0, 1.0, N_CLUSTERS, rngmod.stream(seed, "tau2"))
    lambda_ = cluster.astype(np.int64)
    sigma2 = tau2[cluster - 1]
    eps = rngmod.stream(seed, "eps").standard_normal(n) * np.sqrt(sigma2)

    x_causal = genotypes.columns(causal) if len(causal) else np.zeros((n, 0))
    logits = trait_logits(x_causal, beta[causal], lambda_, eps)
    y = draw_traits(logits, rngmod.stream(seed, "trait"))

    cov = np.stack([(cluster == 2), (cluster == 3)], axis=1).astype(np.float64)
    pheno = PhenotypeTable(list(genotypes.sample_ids), y, "binary", cov, ["cluster_2", "cluster_3"])
    truth = SimTruth(gamma, s, beta, causal, lambda_, sigma2, tau2, cluster, cfg)
    return pheno, truth


def simulate(cfg: SimConfig):
    """Run the whole generator: returns ``(GenotypeMatrix, PhenotypeTable, SimTruth)``."""
    gamma, s = sample_factors(cfg)
    genotypes, _ = sample_genotypes(gamma, s, cfg.seed, return_pi=False)
    pheno, truth = sample_traits(genotypes, cfg, gamma, s)
    return genotypes, pheno, truth


GENOTYPE_FILE = "genotypes.gwdl"
PHENOTYPE_FILE = "phenotypes.tsv"
TRUTH_FILE = "truth.json"


def make_benchmark(cfg: SimConfig, out_dir, *, sidecars: bool = False) -> Path:
    """Write a reproducible dataset bundle (GWDL matrix, phenotype TSV, truth JSON).

    With ``sidecars`` the factor matrices are also dumped as raw little-endian
    float64 (``gamma.f64`` M x 3, ``s.f64`` 3 x N, row-major).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    genotypes, pheno, truth = simulate(cfg)
    write_atomic(out / GENOTYPE_FILE, encode_matrix(genotypes))
    write_atomic(out / PHENOTYPE_FILE, phenotype_tsv(pheno))
    write_atomic(out / TRUTH_FILE, json.dumps(truth.manifest(), indent=1) + "\n")
    if sidecars:
        write_atomic(out / "gamma.f64", truth.gamma.astype("<f8").tobytes())
        write_atomic(out / "s.f64", truth.s.astype("<f8").tobytes())
    return out


def load_truth(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / TRUTH_FILE
    return json.loads(path.read_text())
