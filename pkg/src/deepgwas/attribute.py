"""DeepLIFT attribution with the Linear and Rescale rules.

Multipliers flow backwards from the target neuron. Affine layers pass them
through their weights (bias never contributes to a difference-from-reference);
elementwise nonlinearities scale them by ``(f(z) - f(z_ref)) / (z - z_ref)``.
The score of input ``i`` is its multiplier times ``x_i - x_ref_i``, so scores
sum to ``t(x) - t(x_ref)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .genotype import GenotypeMatrix, all_snp_stats, write_atomic
from .neural import HEAD_BINARY, MlpModel, activate, activation_grad, forward

RESCALE_EPS = 1e-7


@dataclass(frozen=True)
class ReferenceInput:
    values: np.ndarray
    source: str = "all samples"


@dataclass
class AttributionVector:
    scores: np.ndarray
    delta_t: float
    sample_id: str = ""


@dataclass
class AttributionSummary:
    mean_abs: np.ndarray
    n_samples: int
    seed: int = 0


def compute_reference(data, source: str = "all samples") -> ReferenceInput:
    """Per-SNP mean genotype.

    ``data`` is a GenotypeMatrix (missing calls excluded from the mean) or a
    dense samples x SNPs array.
    """
    if isinstance(data, GenotypeMatrix):
        if data.n_samples == 0:
            raise DataError("cannot build a reference from zero samples")
        mean = all_snp_stats(data)["dosage_mean"]
        if np.isnan(mean).any():
            raise DataError("reference undefined for all-missing SNPs")
        return ReferenceInput(mean, source)
    x = np.asarray(data)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("reference needs a non-empty samples x SNPs matrix")
    return ReferenceInput(x.mean(axis=0, dtype=np.float64), source)


def multipliers_linear(weight: np.ndarray) -> np.ndarray:
    """Multiplier from input i to output j of an affine layer: ``w[j, i]``."""
    return np.asarray(weight, dtype=np.float64)


def multiplier_rescale(z, z_ref, activation: str) -> np.ndarray:
    """Rescale-rule multiplier ``delta f / delta z``; falls back to ``f'`` at the
    midpoint when ``|z - z_ref| <= 1e-7``."""
    z = np.asarray(z, dtype=np.float64)
    z_ref = np.broadcast_to(np.asarray(z_ref, dtype=np.float64), z.shape)
    dz = z - z_ref
    small = np.abs(dz) <= RESCALE_EPS
    safe = np.where(small, 1.0, dz)
    ratio = (activate(z, activation) - activate(z_ref, activation)) / safe
    if small.any():
        ratio = np.where(small, activation_grad(0.5 * (z + z_ref), activation), ratio)
    return ratio


def _target_kind(model: MlpModel, target: str) -> str:
    if target not in ("logit", "output"):
        raise ConfigError(f"attribution target must be 'logit' or 'output', got {target!r}")
    # a regression head is already the identity, so both targets coincide
    return "output" if target == "output" and model.head == HEAD_BINARY else "logit"


def deeplift_batch(model: MlpModel, x, reference: ReferenceInput, target: str = "logit"):
    """Attributions for a batch of inputs.

    Returns ``(scores, delta_t)`` with ``scores`` of shape (batch, M) and
    ``delta_t`` of shape (batch,).
    """
    kind = _target_kind(model, target)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    ref = np.asarray(reference.values, dtype=np.float64)
    if ref.shape != (model.input_dim,):
        raise DataError(f"reference has length {ref.size}, model expects {model.input_dim}")
    trace = forward(model, x)
    ref_trace = forward(model, ref[None, :])

    t, t_ref = trace.output, ref_trace.output[0]
    mult = np.ones((x.shape[0], 1))
    if kind == "output":
        mult = multiplier_rescale(t, t_ref, "sigmoid")[:, None]
        t, t_ref = activate(t, "sigmoid"), float(activate(np.array([t_ref]), "sigmoid")[0])

    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        if layer.activation != "identity":
            mult = mult * multiplier_rescale(trace.pre[k], ref_trace.pre[k][0], layer.activation)
        mult = mult @ multipliers_linear(layer.weight)
    scores = mult * (x - ref)
    return scores, t - t_ref


def deeplift_attribute(
    model: MlpModel, x, reference: ReferenceInput, target: str = "logit", sample_id: str = ""
) -> AttributionVector:
    scores, delta = deeplift_batch(model, np.asarray(x).reshape(1, -1), reference, target)
    return AttributionVector(scores[0], float(delta[0]), sample_id)


def attribute_split(model: MlpModel, x, idx, reference: ReferenceInput, target: str = "logit", chunk: int = 256):
    """Run DeepLIFT over ``x[idx]`` in chunks; yields ``(scores, delta_t)`` blocks
    in input order."""
    idx = np.asarray(idx)
    for start in range(0, len(idx), chunk):
        yield deeplift_batch(model, x[idx[start : start + chunk]], reference, target)


def summarize(scores, seed: int = 0) -> AttributionSummary:
    """Mean absolute attribution per feature.

    ``scores`` is a (samples, M) array, a sequence of AttributionVector, or an
    iterable of ``(scores_block, delta)`` pairs as yielded by attribute_split.
    """
    total, count = None, 0
    if isinstance(scores, np.ndarray):
        blocks = [scores if scores.ndim == 2 else scores[None, :]]
    else:
        blocks = []
        for item in scores:
            if isinstance(item, AttributionVector):
                blocks.append(item.scores[None, :])
            elif isinstance(item, tuple):
                blocks.append(np.asarray(item[0]))
            else:
                blocks.append(np.atleast_2d(item))
    for b in blocks:
        if total is None:
            total = np.zeros(b.shape[1])
        elif b.shape[1] != total.shape[0]:
            raise DataError("attribution vectors differ in length")
        total += np.abs(b).sum(axis=0)
        count += b.shape[0]
    if not count:
        raise DataError("no attributions to summarise")
    return AttributionSummary(total / count, count, seed)


def top_k(summary, k: int = 10) -> list[int]:
    """Indices of the k largest scores, ties broken by lower index."""
    scores = summary.mean_abs if isinstance(summary, AttributionSummary) else np.asarray(summary)
    if not 0 <= k <= scores.size:
        raise ConfigError(f"k={k} outside [0, {scores.size}]")
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


@dataclass
class SeedAggregate:
    seeds: list[int]
    per_seed_top: list[list[int]]
    pooled_mean: np.ndarray
    selection_frequency: np.ndarray
    per_seed_scores: list[np.ndarray] = field(default_factory=list)

    def union_top(self) -> list[int]:
        return sorted({i for top in self.per_seed_top for i in top})


def aggregate_seeds(summaries: Sequence[AttributionSummary], k: int = 10) -> SeedAggregate:
    """Per-seed top-k, mean of the per-seed summaries, and how often each SNP
    lands in a seed's top-k."""
    if not summaries:
        raise DataError("no summaries to aggregate")
    m = summaries[0].mean_abs.size
    if any(s.mean_abs.size != m for s in summaries):
        raise DataError("summaries disagree on the number of SNPs")
    tops = [top_k(s, k) for s in summaries]
    freq = np.zeros(m)
    for top in tops:
        freq[top] += 1
    if len(summaries) == 1:
        pooled = summaries[0].mean_abs.copy()
    else:
        pooled = np.mean([s.mean_abs for s in summaries], axis=0)
    return SeedAggregate(
        [s.seed for s in summaries], tops, pooled, freq / len(summaries), [s.mean_abs for s in summaries]
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def summary_tsv(snp_ids: Sequence[str], summary: AttributionSummary) -> str:
    lines = ["snp_id\tmean_abs_score"]
    lines += [f"{sid}\t{_fmt(v)}" for sid, v in zip(snp_ids, summary.mean_abs)]
    return "\n".join(lines) + "\n"


def aggregate_tsv(snp_ids: Sequence[str], agg: SeedAggregate) -> str:
    header = ["snp_id", "mean_abs_score", *(f"seed_{s}" for s in agg.seeds), "selection_frequency"]
    lines = ["\t".join(header)]
    for j, sid in enumerate(snp_ids):
        row = [sid, _fmt(agg.pooled_mean[j]), *(_fmt(sc[j]) for sc in agg.per_seed_scores), _fmt(agg.selection_frequency[j])]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def write_summary(path, snp_ids, summary: AttributionSummary) -> None:
    write_atomic(path, summary_tsv(snp_ids, summary))


def read_scores(path, column: str = "mean_abs_score") -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty score file")
    header = lines[0].split("\t")
    if "snp_id" not in header or column not in header:
        raise DataError(f"{path}: needs columns snp_id and {column}")
    i_id, i_val = header.index("snp_id"), header.index(column)
    ids, vals = [], []
    for ln in lines[1:]:
        parts = ln.split("\t")
        ids.append(parts[i_id])
        vals.append(float(parts[i_val]))
    return ids, np.array(vals)
