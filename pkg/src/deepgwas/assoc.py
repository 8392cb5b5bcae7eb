"""Per-SNP association scan: OLS for continuous traits, logistic regression
(IRLS) for binary traits, Wald tests on the dosage coefficient."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import special
from .errors import ConfigError, DataError, SingularDesignError
from .genotype import MISSING, GenotypeMatrix, PhenotypeTable, write_atomic

SEPARATION_BOUND = 30.0
MAX_STRATA = 64  # covariate matrices with at most this many distinct rows count as categorical


@dataclass(frozen=True)
class DesignSpec:
    """Columns of the per-SNP model: intercept, named covariates, then dosage."""

    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        names = ("intercept", *self.covariates, "dosage")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate design columns in {names}")

    @property
    def columns(self) -> tuple[str, ...]:
        return ("intercept", *self.covariates, "dosage")


@dataclass
class OlsFit:
    beta: np.ndarray
    stderr: np.ndarray
    t_stats: np.ndarray
    neg_log10_p: np.ndarray
    df: int
    degenerate: bool = False

    @property
    def p_values(self) -> np.ndarray:
        return np.power(10.0, -self.neg_log10_p)


def _rank_checked_qr(x: np.ndarray):
    q, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(x.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    if diag.size == 0 or diag[-1] <= tol:
        raise SingularDesignError(f"design matrix is rank deficient ({int((diag > tol).sum())} < {x.shape[1]})")
    return q, r, piv


def ols_fit(y, x) -> OlsFit:
    """Least squares via pivoted QR with two-sided t tests (df = n - p).

    A perfect fit is flagged ``degenerate``: standard errors are 0 and the
    p-values sit at the 0 floor (``neg_log10_p = inf``).
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    if n <= p:
        raise SingularDesignError(f"need more rows than columns, got {n} x {p}")
    q, r, piv = _rank_checked_qr(x)
    coef_piv = scipy.linalg.solve_triangular(r, q.T @ y)
    beta = np.empty(p)
    beta[piv] = coef_piv
    resid = y - x @ beta
    rss = float(resid @ resid)
    df = n - p
    if math.sqrt(rss) <= 1e-10 * max(1.0, float(np.linalg.norm(y))):
        stderr = np.zeros(p)
        t = np.where(beta == 0, 0.0, np.copysign(np.inf, beta))
        nl = np.where(beta == 0, 0.0, np.inf)
        return OlsFit(beta, stderr, t, nl, df, degenerate=True)
    r_inv = scipy.linalg.solve_triangular(r, np.eye(p))
    var_piv = (r_inv**2).sum(axis=1) * (rss / df)
    stderr = np.empty(p)
    stderr[piv] = np.sqrt(var_piv)
    t = beta / stderr
    nl = np.array([special.neg_log10_p_t(v, df) for v in t])
    return OlsFit(beta, stderr, t, nl, df)


@dataclass
class LogisticFit:
    beta: np.ndarray
    stderr: np.ndarray
    converged: bool
    separated: bool = False
    n_iter: int = 0

    @property
    def z(self) -> np.ndarray:
        return self.beta / self.stderr

    @property
    def neg_log10_p(self) -> np.ndarray:
        return np.array([special.neg_log10_p_normal(v) for v in self.z])


def _sigmoid(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def logistic_irls(y, x, max_iter: int = 25, tol: float = 1e-8, beta0=None) -> LogisticFit:
    """Newton-Raphson maximum likelihood for logistic regression.

    Converged once every coefficient moves by less than ``tol``. Iteration is
    abandoned (``converged=False, separated=True``) as soon as any
    ``|beta| > 30``, which is how complete separation shows up.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("logistic regression needs a 0/1 response")
    n, p = x.shape
    if n <= p:
        raise SingularDesignError(f"need more rows than columns, got {n} x {p}")
    _rank_checked_qr(x)
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=np.float64)
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = _sigmoid(x @ beta)
        w = mu * (1.0 - mu)
        info = x.T @ (x * w[:, None])
        score = x.T @ (y - mu)
        try:
            step = scipy.linalg.solve(info, score, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            separated = True
            break
        beta = beta + step
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            separated = True
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    mu = _sigmoid(x @ beta)
    w = mu * (1.0 - mu)
    try:
        cov = np.linalg.inv(x.T @ (x * w[:, None]))
        stderr = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        stderr = np.full(p, np.inf)
    if not converged and np.all(np.abs(mu - y) < 1e-6):
        separated = True
    return LogisticFit(beta, stderr, converged, separated, it)


@dataclass
class AssocResult:
    snp_ids: list[str]
    beta: np.ndarray
    stderr: np.ndarray
    statistic: np.ndarray
    neg_log10_p: np.ndarray
    n_used: np.ndarray
    converged: np.ndarray
    test: str  # "logistic-wald-z" or "ols-wald-t"
    n_covariates: int = 0
    errors: dict[int, str] = field(default_factory=dict)
    n_excluded: int = 0  # samples in covariate strata with a constant binary outcome
    dropped_covariates: tuple[str, ...] = ()

    @property
    def p_value(self) -> np.ndarray:
        return np.power(10.0, -self.neg_log10_p)

    def recomputed_neg_log10_p(self) -> np.ndarray:
        """Recompute -log10 p from the stored statistic (and df for t tests)."""
        out = np.full(len(self.snp_ids), np.nan)
        for j, stat in enumerate(self.statistic):
            if math.isnan(stat):
                continue
            if self.test == "logistic-wald-z":
                out[j] = special.neg_log10_p_normal(stat)
            else:
                df = int(self.n_used[j]) - (self.n_covariates + 2)
                out[j] = special.neg_log10_p_t(stat, df) if math.isfinite(stat) else math.inf
        return out

    def bonferroni(self, alpha: float = 0.05) -> float:
        return alpha / max(len(self.snp_ids), 1)


def separated_strata(y: np.ndarray, cov: np.ndarray):
    """Handle quasi-complete separation caused by categorical covariates.

    A stratum (distinct covariate row) whose binary outcome is constant drives
    the nuisance coefficients to infinity, yet contributes nothing to the
    likelihood in the limit. Dropping its samples, then any covariate columns
    left collinear with the intercept and earlier columns, gives the limiting
    MLE of the remaining coefficients, including the dosage effect.

    Returns ``(keep_mask, kept_column_indices)``.
    """
    n = len(y)
    keep = np.ones(n, dtype=bool)
    if cov.shape[1] == 0:
        return keep, []
    strata, inverse = np.unique(cov, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(strata) > MAX_STRATA:
        return keep, list(range(cov.shape[1]))
    for s in range(len(strata)):
        rows = inverse == s
        if np.all(y[rows] == y[rows][0]):
            keep[rows] = False
    if not keep.any():
        # nothing informative left; per-SNP fits will report the separation
        return np.ones(n, dtype=bool), list(range(cov.shape[1]))
    cols: list[int] = []
    base = np.ones((int(keep.sum()), 1))
    for c in range(cov.shape[1]):
        trial = np.column_stack([base, cov[keep][:, c]])
        if np.linalg.matrix_rank(trial) == trial.shape[1]:
            base, cols = trial, cols + [c]
    return keep, cols


def _design(cov: np.ndarray, dosage: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(dosage)), cov, dosage])


def _fit_one(j, codes_col, y, cov, binary, null_beta):
    observed = codes_col != MISSING
    dosage = codes_col[observed].astype(np.float64)
    yj, cj = y[observed], cov[observed]
    x = _design(cj, dosage)
    n_used = int(observed.sum())
    if binary:
        start = None if null_beta is None else np.append(null_beta, 0.0)
        fit = logistic_irls(yj, x, beta0=start)
        if not fit.converged and not fit.separated:
            fit = logistic_irls(yj, x, max_iter=100)
        b, se = fit.beta[-1], fit.stderr[-1]
        z = b / se if se > 0 else math.nan
        nl = special.neg_log10_p_normal(z) if fit.converged else math.nan
        return b, se, (z if fit.converged else math.nan), nl, n_used, fit.converged, (
            None if fit.converged else ("separation" if fit.separated else "no convergence")
        )
    fit = ols_fit(yj, x)
    return fit.beta[-1], fit.stderr[-1], fit.t_stats[-1], fit.neg_log10_p[-1], n_used, True, (
        "degenerate fit (zero residual variance)" if fit.degenerate else None
    )


def scan(
    genotypes: GenotypeMatrix,
    phenotypes: PhenotypeTable,
    design: DesignSpec | None = None,
    snp_indices: Sequence[int] | None = None,
    workers: int = 1,
) -> AssocResult:
    """Test each SNP in turn (additive dosage coding) adjusting for the design's
    covariates. Binary traits use logistic regression, continuous ones OLS.

    Per-SNP failures (singular design, separation) are recorded as NaN rows
    with ``converged=False`` and a message in ``errors``; the scan goes on.
    """
    design = design or DesignSpec()
    pheno = phenotypes.align_to(genotypes.sample_ids) if list(phenotypes.sample_ids) != list(genotypes.sample_ids) else phenotypes
    cov = np.column_stack([pheno.covariate(c) for c in design.covariates]) if design.covariates else np.zeros((genotypes.n_samples, 0))
    y = pheno.trait
    binary = pheno.trait_kind == "binary"
    idx = np.arange(genotypes.n_snps) if snp_indices is None else np.asarray(snp_indices, dtype=np.int64)

    null_beta = None
    n_excluded, dropped = 0, ()
    if binary:
        keep, cols = separated_strata(y, cov)
        if not keep.all() or len(cols) < cov.shape[1]:
            n_excluded = int((~keep).sum())
            dropped = tuple(c for k, c in enumerate(design.covariates) if k not in cols)
        y, cov = y[keep], cov[keep][:, cols]
        null_fit = logistic_irls(y, np.column_stack([np.ones(len(y)), cov]))
        null_beta = null_fit.beta if null_fit.converged else None

    def run_block(block):
        rows = []
        codes = genotypes.columns(block)
        if binary:
            codes = codes[keep]
        for k, j in enumerate(block):
            try:
                rows.append(_fit_one(j, codes[:, k], y, cov, binary, null_beta))
            except (SingularDesignError, DataError, np.linalg.LinAlgError) as exc:
                rows.append((math.nan, math.nan, math.nan, math.nan, int((codes[:, k] != MISSING).sum()), False, str(exc)))
        return rows

    blocks = [idx[s : s + 256] for s in range(0, len(idx), 256)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_block, blocks))
    else:
        parts = [run_block(b) for b in blocks]
    rows = [r for part in parts for r in part]

    errors = {int(idx[k]): r[6] for k, r in enumerate(rows) if r[6]}
    return AssocResult(
        snp_ids=[genotypes.snp_ids[j] for j in idx],
        beta=np.array([r[0] for r in rows], dtype=np.float64),
        stderr=np.array([r[1] for r in rows], dtype=np.float64),
        statistic=np.array([r[2] for r in rows], dtype=np.float64),
        neg_log10_p=np.array([r[3] for r in rows], dtype=np.float64),
        n_used=np.array([r[4] for r in rows], dtype=np.int64),
        converged=np.array([r[5] for r in rows], dtype=bool),
        test="logistic-wald-z" if binary else "ols-wald-t",
        n_covariates=len(design.covariates),
        errors=errors,
        n_excluded=n_excluded,
        dropped_covariates=dropped,
    )


def log_transform(values, sample_ids: Sequence[str] | None = None) -> np.ndarray:
    """Natural log of each sample's value; samples with several measurements
    are first averaged arithmetically."""
    means, bad = [], []
    for i, v in enumerate(values):
        arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
        label = sample_ids[i] if sample_ids is not None else i
        if arr.size == 0 or np.any(~(arr > 0)):
            bad.append(label)
            means.append(math.nan)
            continue
        means.append(float(arr.mean()))
    if bad:
        raise DataError(f"log transform needs positive values; offending samples: {bad[:20]}")
    return np.log(np.array(means))


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def scan_tsv(result: AssocResult, alpha: float = 0.05) -> str:
    threshold = result.bonferroni(alpha)
    lines = [
        f"# test={result.test}",
        f"# n_snps={len(result.snp_ids)}",
        f"# bonferroni_alpha={alpha!r}",
        f"# bonferroni_p={threshold!r}",
        f"# bonferroni_neg_log10_p={-math.log10(threshold)!r}",
    ]
    if result.n_excluded or result.dropped_covariates:
        lines.append(f"# excluded_samples={result.n_excluded}")
        lines.append(f"# dropped_covariates={','.join(result.dropped_covariates)}")
    lines.append("snp_id\tbeta\tse\tstat\tneg_log10_p\tconverged")
    for j, sid in enumerate(result.snp_ids):
        lines.append(
            "\t".join(
                [sid, _fmt(result.beta[j]), _fmt(result.stderr[j]), _fmt(result.statistic[j]),
                 _fmt(result.neg_log10_p[j]), "true" if result.converged[j] else "false"]
            )
        )
    return "\n".join(lines) + "\n"


def write_scan(path, result: AssocResult, alpha: float = 0.05) -> None:
    write_atomic(path, scan_tsv(result, alpha))


def read_scan(path) -> tuple[dict[str, str], list[str], np.ndarray]:
    """Returns ``(metadata, snp_ids, neg_log10_p)`` from a scan TSV."""
    meta: dict[str, str] = {}
    ids, vals = [], []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
                continue
            parts = line.split("\t")
            if header is None:
                header = parts
                if "snp_id" not in header or "neg_log10_p" not in header:
                    raise DataError(f"{path}: scan TSV needs snp_id and neg_log10_p columns")
                continue
            ids.append(parts[header.index("snp_id")])
            vals.append(float(parts[header.index("neg_log10_p")]))
    if header is None:
        raise DataError(f"{path}: empty scan file")
    return meta, ids, np.array(vals)
