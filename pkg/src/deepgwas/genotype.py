"""Genotype matrices, phenotype tables and variant QC.

Dosages are alternate-allele counts stored as 2-bit codes, SNP-major: each SNP
column occupies ``ceil(N / 4)`` bytes, four samples per byte, first sample in
the lowest two bits. Code ``0b11`` marks a missing call.

GWDL file layout (all integers little-endian)::

    b"GWDL" | version u32 | N u64 | M u64
    | M x (u32 byte length + UTF-8 snp id)
    | N x (u32 byte length + UTF-8 sample id)
    | M x ceil(N/4) packed bytes
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DimensionMismatchError,
    EmptyResultError,
    EncodingError,
    FormatError,
    StatsError,
    TruncatedError,
    VersionError,
)

MISSING = 3
GWDL_MAGIC = b"GWDL"
GWDL_VERSION = 1

_SHIFTS = np.array([0, 2, 4, 6], dtype=np.uint8)


def pack_genotypes(codes) -> bytes:
    """Pack a 1-D sequence of dosage codes into bytes (4 codes per byte)."""
    arr = np.asarray(codes)
    if arr.ndim != 1:
        raise EncodingError("pack_genotypes expects a 1-D sequence")
    return _pack_rows(arr.reshape(1, -1)).tobytes()


def unpack_genotypes(block: bytes, n: int) -> np.ndarray:
    data = np.frombuffer(block, dtype=np.uint8)
    if data.size != _column_bytes(n):
        raise DimensionMismatchError(f"expected {_column_bytes(n)} bytes for {n} codes, got {data.size}")
    return _unpack_rows(data.reshape(1, -1), n)[0]


def _column_bytes(n: int) -> int:
    return (n + 3) // 4


def _pack_rows(codes: np.ndarray) -> np.ndarray:
    """Pack a (rows, n) code array into (rows, ceil(n/4)) uint8."""
    if codes.size and (codes.min() < 0 or codes.max() > MISSING):
        bad = np.unique(codes[(codes < 0) | (codes > MISSING)])
        raise EncodingError(f"genotype codes outside {{0,1,2,MISSING}}: {bad[:5].tolist()}")
    if codes.size and not np.issubdtype(codes.dtype, np.integer):
        if not np.all(np.equal(np.mod(codes, 1), 0)):
            raise EncodingError("genotype codes must be integers")
    rows, n = codes.shape
    nb = _column_bytes(n)
    padded = np.zeros((rows, nb * 4), dtype=np.uint8)
    padded[:, :n] = codes
    quads = padded.reshape(rows, nb, 4) << _SHIFTS
    return np.bitwise_or.reduce(quads, axis=2).astype(np.uint8)


def _unpack_rows(packed: np.ndarray, n: int) -> np.ndarray:
    rows = packed.shape[0]
    codes = (packed[:, :, None] >> _SHIFTS) & 0b11
    return codes.reshape(rows, -1)[:, :n].astype(np.int8)


@dataclass(frozen=True)
class SnpStats:
    dosage_mean: float
    minor_allele_freq: float
    call_rate: float


@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """Immutable N x M hard-call genotype matrix in packed SNP-major form."""

    n_samples: int
    n_snps: int
    data: np.ndarray  # uint8, shape (n_snps, ceil(n_samples / 4))
    snp_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        if self.data.shape != (self.n_snps, _column_bytes(self.n_samples)):
            raise DimensionMismatchError(
                f"packed payload shape {self.data.shape} does not match N={self.n_samples}, M={self.n_snps}"
            )
        if len(self.snp_ids) != self.n_snps or len(self.sample_ids) != self.n_samples:
            raise DimensionMismatchError("identifier lists do not match matrix dimensions")
        for name, ids in (("snp", self.snp_ids), ("sample", self.sample_ids)):
            if len(set(ids)) != len(ids):
                raise DataError(f"duplicate {name} ids")
        self.data.setflags(write=False)

    @classmethod
    def from_codes(cls, codes, snp_ids=None, sample_ids=None) -> "GenotypeMatrix":
        """Build from an N x M array of codes (sample-major, as usually held in memory)."""
        codes = np.asarray(codes)
        if codes.ndim != 2:
            raise EncodingError("codes must be a 2-D N x M array")
        n, m = codes.shape
        snp_ids = tuple(snp_ids) if snp_ids is not None else tuple(f"snp{j}" for j in range(m))
        sample_ids = tuple(sample_ids) if sample_ids is not None else tuple(f"s{i}" for i in range(n))
        return cls(n, m, _pack_rows(codes.T), snp_ids, sample_ids)

    def column(self, j: int) -> np.ndarray:
        return _unpack_rows(self.data[j : j + 1], self.n_samples)[0]

    def columns(self, idx) -> np.ndarray:
        """Unpacked codes of the selected SNPs, shape (N, len(idx))."""
        idx = np.asarray(idx, dtype=np.int64)
        return _unpack_rows(self.data[idx], self.n_samples).T

    def codes(self) -> np.ndarray:
        """Full N x M int8 code matrix (MISSING stays 3)."""
        return _unpack_rows(self.data, self.n_samples).T

    def has_missing(self) -> bool:
        return bool(np.any(self.codes() == MISSING))

    def subset_snps(self, idx) -> "GenotypeMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return GenotypeMatrix(
            self.n_samples,
            len(idx),
            np.ascontiguousarray(self.data[idx]),
            tuple(self.snp_ids[j] for j in idx),
            self.sample_ids,
        )

    def __eq__(self, other):
        if not isinstance(other, GenotypeMatrix):
            return NotImplemented
        return (
            self.n_samples == other.n_samples
            and self.n_snps == other.n_snps
            and self.snp_ids == other.snp_ids
            and self.sample_ids == other.sample_ids
            and np.array_equal(self.data, other.data)
        )


def _pack_ids(ids: Sequence[str]) -> bytes:
    out = bytearray()
    for s in ids:
        raw = s.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    return bytes(out)


def encode_matrix(m: GenotypeMatrix) -> bytes:
    header = GWDL_MAGIC + struct.pack("<IQQ", GWDL_VERSION, m.n_samples, m.n_snps)
    return header + _pack_ids(m.snp_ids) + _pack_ids(m.sample_ids) + m.data.tobytes()


def decode_matrix(buf: bytes) -> GenotypeMatrix:
    if len(buf) < 4 or buf[:4] != GWDL_MAGIC:
        raise BadMagicError("not a GWDL file (bad magic bytes)")
    if len(buf) < 24:
        raise TruncatedError("GWDL header truncated")
    version, n, m = struct.unpack_from("<IQQ", buf, 4)
    if version != GWDL_VERSION:
        raise VersionError(f"unsupported GWDL version {version}")
    pos = 24

    def read_ids(count):
        nonlocal pos
        ids = []
        for _ in range(count):
            if pos + 4 > len(buf):
                raise TruncatedError("identifier table truncated")
            (length,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + length > len(buf):
                raise TruncatedError("identifier table truncated")
            try:
                ids.append(buf[pos : pos + length].decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise FormatError(f"identifier is not valid UTF-8: {exc}") from None
            pos += length
        return tuple(ids)

    snp_ids = read_ids(m)
    sample_ids = read_ids(n)
    expected = m * _column_bytes(n)
    remaining = len(buf) - pos
    if remaining < expected:
        raise TruncatedError(f"payload truncated: header implies {expected} bytes, found {remaining}")
    if remaining > expected:
        raise DimensionMismatchError(f"payload has {remaining - expected} trailing bytes beyond N={n}, M={m}")
    data = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos).reshape(m, _column_bytes(n)).copy()
    if n % 4 and m:
        pad_mask = np.uint8((0xFF << (2 * (n % 4))) & 0xFF)
        if np.any(data[:, -1] & pad_mask):
            raise DimensionMismatchError("non-zero padding bits in final byte of a column")
    return GenotypeMatrix(n, m, data, snp_ids, sample_ids)


def write_atomic(path, payload: bytes | str) -> None:
    """Write via temp file + rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_matrix(m: GenotypeMatrix, path) -> None:
    write_atomic(path, encode_matrix(m))


def load_matrix(path) -> GenotypeMatrix:
    return decode_matrix(Path(path).read_bytes())


# --- variant statistics -----------------------------------------------------


def _column_summaries(m: GenotypeMatrix):
    """Per-SNP (observed count, dosage sum) streamed in blocks of columns."""
    count = np.empty(m.n_snps, dtype=np.int64)
    total = np.empty(m.n_snps, dtype=np.int64)
    block = max(1, 2_000_000 // max(m.n_samples, 1))
    for start in range(0, m.n_snps, block):
        codes = _unpack_rows(m.data[start : start + block], m.n_samples)
        observed = codes != MISSING
        count[start : start + block] = observed.sum(axis=1)
        total[start : start + block] = np.where(observed, codes, 0).sum(axis=1, dtype=np.int64)
    return count, total


def snp_stats(m: GenotypeMatrix, snp_index: int) -> SnpStats:
    if not 0 <= snp_index < m.n_snps:
        raise IndexError(f"snp_index {snp_index} out of range for M={m.n_snps}")
    col = m.column(snp_index)
    observed = col[col != MISSING]
    if observed.size == 0:
        raise StatsError(f"SNP {m.snp_ids[snp_index]!r} has no observed genotypes")
    mean = float(observed.sum()) / observed.size
    f = mean / 2.0
    return SnpStats(mean, min(f, 1.0 - f), observed.size / m.n_samples)


def all_snp_stats(m: GenotypeMatrix) -> dict[str, np.ndarray]:
    """Vectorised snp_stats over every column; undefined entries are NaN."""
    count, total = _column_summaries(m)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    f = mean / 2.0
    return {
        "dosage_mean": mean,
        "minor_allele_freq": np.minimum(f, 1.0 - f),
        "call_rate": count / m.n_samples if m.n_samples else np.zeros(m.n_snps),
    }


def filter_variants(m: GenotypeMatrix, maf_min: float, call_rate_min: float):
    """Keep SNPs with MAF >= maf_min and call rate >= call_rate_min.

    Returns ``(filtered_matrix, kept_indices)``; raises EmptyResultError when
    nothing survives.
    """
    for name, v in (("maf_min", maf_min), ("call_rate_min", call_rate_min)):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {v}")
    stats = all_snp_stats(m)
    maf = stats["minor_allele_freq"]
    keep = stats["call_rate"] >= call_rate_min
    keep &= np.where(np.isnan(maf), maf_min <= 0.0, maf >= maf_min)
    kept = np.flatnonzero(keep)
    if kept.size == 0:
        raise EmptyResultError(f"no SNPs pass maf_min={maf_min}, call_rate_min={call_rate_min}")
    return m.subset_snps(kept), kept


def impute_to_mean(m: GenotypeMatrix) -> np.ndarray:
    """Dense float64 N x M matrix with missing calls replaced by the SNP mean."""
    codes = m.codes()
    out = codes.astype(np.float64)
    missing = codes == MISSING
    if not missing.any():
        return out
    stats = all_snp_stats(m)
    mean = stats["dosage_mean"]
    dead = np.flatnonzero(np.isnan(mean))
    if dead.size:
        raise StatsError(f"cannot impute all-missing SNPs: {[m.snp_ids[j] for j in dead[:5]]}")
    rows, cols = np.nonzero(missing)
    out[rows, cols] = mean[cols]
    return out


def dense_dosages(m: GenotypeMatrix) -> np.ndarray:
    """Dosages as int8 when complete (memory-light model input), else mean-imputed float64."""
    codes = m.codes()
    if np.any(codes == MISSING):
        return impute_to_mean(m)
    return codes


# --- phenotypes ---------------------------------------------------------------


@dataclass
class PhenotypeTable:
    sample_ids: list[str]
    trait: np.ndarray
    trait_kind: str = "binary"
    covariates: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.trait = np.asarray(self.trait, dtype=np.float64)
        n = len(self.sample_ids)
        if self.trait.shape != (n,):
            raise DataError(f"trait has shape {self.trait.shape}, expected ({n},)")
        if self.trait_kind not in ("binary", "continuous"):
            raise ConfigError(f"unknown trait kind {self.trait_kind!r}")
        if self.trait_kind == "binary" and not np.all(np.isin(self.trait, (0.0, 1.0))):
            raise DataError("binary trait contains values other than 0/1")
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.size == 0:
            cov = np.zeros((n, 0))
        if cov.shape != (n, len(self.covariate_names)):
            raise DataError(
                f"covariates shape {cov.shape} does not match {n} samples x {len(self.covariate_names)} names"
            )
        if len(set(self.covariate_names)) != len(self.covariate_names):
            raise DataError("duplicate covariate names")
        self.covariates = cov

    def covariate(self, name: str) -> np.ndarray:
        return self.covariates[:, self.covariate_names.index(name)]

    def align_to(self, sample_ids: Sequence[str]) -> "PhenotypeTable":
        """Reorder rows to match ``sample_ids`` exactly."""
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        missing = [s for s in sample_ids if s not in pos]
        if missing:
            raise DataError(f"{len(missing)} genotyped samples lack phenotypes, e.g. {missing[:5]}")
        idx = np.array([pos[s] for s in sample_ids], dtype=np.int64)
        return PhenotypeTable(
            list(sample_ids), self.trait[idx], self.trait_kind, self.covariates[idx], list(self.covariate_names)
        )


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def phenotype_tsv(table: PhenotypeTable, trait_col: str = "trait") -> str:
    lines = ["\t".join(["sample_id", trait_col, *table.covariate_names])]
    for i, sid in enumerate(table.sample_ids):
        lines.append("\t".join([sid, _fmt(table.trait[i]), *(_fmt(v) for v in table.covariates[i])]))
    return "\n".join(lines) + "\n"


def save_phenotypes(table: PhenotypeTable, path, trait_col: str = "trait") -> None:
    write_atomic(path, phenotype_tsv(table, trait_col))


def read_tsv_columns(path) -> tuple[list[str], dict[str, list[str]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t") if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty table")
    header = rows[0]
    if "sample_id" not in header and "snp_id" not in header:
        raise DataError(f"{path}: header lacks an id column (sample_id / snp_id)")
    cols: dict[str, list[str]] = {h: [] for h in header}
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        for h, v in zip(header, r):
            cols[h].append(v)
    return header, cols


def load_phenotypes(
    path,
    trait_col: str = "trait",
    trait_kind: str | None = None,
    covariate_cols: Sequence[str] | None = None,
) -> PhenotypeTable:
    """Read a phenotype TSV. Every non-id, non-trait column is a covariate unless
    ``covariate_cols`` narrows the set. ``trait_kind`` is inferred when omitted."""
    header, cols = read_tsv_columns(path)
    if "sample_id" not in cols:
        raise DataError(f"{path}: missing required column 'sample_id'")
    if trait_col not in cols:
        raise DataError(f"{path}: missing trait column {trait_col!r}")
    if covariate_cols is None:
        covariate_cols = [h for h in header if h not in ("sample_id", trait_col)]
    for c in covariate_cols:
        if c not in cols:
            raise DataError(f"{path}: missing covariate column {c!r}")
    try:
        trait = np.array([float(v) for v in cols[trait_col]])
        cov = np.array([[float(v) for v in cols[c]] for c in covariate_cols]).T
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from None
    if trait_kind is None:
        trait_kind = "binary" if np.all(np.isin(trait, (0.0, 1.0))) else "continuous"
    n = len(cols["sample_id"])
    return PhenotypeTable(cols["sample_id"], trait, trait_kind, cov.reshape(n, len(covariate_cols)), list(covariate_cols))
