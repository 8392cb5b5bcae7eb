import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepgwas import rng
from deepgwas.errors import ConfigError, DataError
from deepgwas.genotype import MISSING, GenotypeMatrix
from deepgwas.kmeans import kmeans, wcss
from deepgwas.simulate import (
    SimConfig,
    allele_frequencies,
    draw_traits,
    kmeans_columns,
    make_benchmark,
    sample_factors,
    sample_genotypes,
    sample_inverse_gamma,
    sample_traits,
    simulate,
)


def small(**kw):
    return SimConfig(**{"n_samples": 400, "n_snps": 50, "a": 0.5, "seed": 3, **kw})


# --- random streams ---------------------------------------------------------------


def test_streams_are_named_and_stable():
    a = rng.stream(7, "gamma").random(5)
    assert np.array_equal(a, rng.stream(7, "gamma").random(5))
    assert not np.array_equal(a, rng.stream(7, "s").random(5))
    assert not np.array_equal(a, rng.stream(8, "gamma").random(5))
    assert not np.array_equal(a, rng.stream(7, "gamma", 1).random(5))


def test_derive_seed_frozen():
    # guards the cross-machine reproducibility of every bundle
    assert rng.derive_seed(0, "gamma") == rng.derive_seed(0, "gamma", 0)
    assert rng.derive_seed(0, "gamma") != rng.derive_seed(0, "gamma", 1)
    assert 0 <= rng.derive_seed(2**70, "x") < 2**64


# --- config ----------------------------------------------------------------------


@pytest.mark.parametrize("kw", [{"a": 0}, {"a": -1}, {"n_causal": 51}, {"n_samples": 0}, {"causal_placement": "middle"}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small(**kw)


# --- factors ----------------------------------------------------------------------


def test_factor_shapes_and_constants():
    gamma, s = sample_factors(small())
    assert gamma.shape == (50, 3) and s.shape == (3, 400)
    assert np.all(gamma[:, 2] == 0.5)
    assert np.all(s[2] == 1.0)
    assert np.all((gamma[:, :2] >= 0) & (gamma[:, :2] < 0.5))


def test_beta_a1_is_uniform():
    _, s = sample_factors(SimConfig(n_samples=50_000, n_snps=1, a=1.0, n_causal=0, seed=1))
    draws = s[:2].ravel()
    assert abs(draws.mean() - 0.5) < 3 * np.sqrt(1 / 12 / draws.size)


def test_small_a_concentrates_at_edges():
    _, s = sample_factors(SimConfig(n_samples=50_000, n_snps=1, a=0.01, n_causal=0, seed=2))
    draws = s[:2].ravel()
    # Gamma-ratio oracle: X/(X+Y) with X, Y ~ Gamma(a)
    g = np.random.default_rng(99)
    x, y = g.gamma(0.01, size=draws.size), g.gamma(0.01, size=draws.size)
    oracle = x / (x + y)
    mid = np.mean((draws > 0.4) & (draws < 0.6))
    mid_oracle = np.mean((oracle > 0.4) & (oracle < 0.6))
    assert mid < 0.01
    assert abs(mid - mid_oracle) < 4 * np.sqrt(max(mid_oracle, 1e-4) / draws.size)
    edge = np.mean((draws < 0.05) | (draws > 0.95))
    assert edge > 0.95


# --- genotypes -----------------------------------------------------------------------


def test_degenerate_frequencies():
    gamma = np.array([[0.5, 0.5, 0.5], [0.0, 0.0, 0.0]])
    s = np.vstack([np.ones((2, 20)), np.ones((1, 20))])
    g, pi = sample_genotypes(gamma, s, seed=0)
    assert np.all(pi[0] == 1.0) and np.all(g.column(0) == 2)
    assert np.all(g.column(1) == 0)


def test_half_frequency_mean():
    n = 100_000
    gamma = np.array([[0.0, 0.0, 0.5]])
    s = np.vstack([np.zeros((2, n)), np.ones((1, n))])
    g, _ = sample_genotypes(gamma, s, seed=4)
    x = g.column(0)
    assert abs(x.mean() - 1.0) < 4 * np.sqrt(0.5 / n)


def test_empirical_frequency_matches_clamped_pi():
    gamma, s = sample_factors(SimConfig(n_samples=6, n_snps=8, a=0.5, n_causal=0, seed=5))
    pi = allele_frequencies(gamma, s)
    reps = 4000
    total = np.zeros_like(pi)
    for r in range(reps):
        g, _ = sample_genotypes(gamma, s, seed=r, return_pi=False)
        total += g.codes().T
    freq = total / (2 * reps)
    sd = np.sqrt(pi * (1 - pi) / (2 * reps))
    assert np.all(np.abs(freq - pi) <= 4 * sd + 1e-12)


def test_clamp_only_bites_above_one():
    gamma, s = sample_factors(SimConfig(n_samples=300, n_snps=300, a=0.1, seed=6))
    raw = gamma @ s
    pi = allele_frequencies(gamma, s)
    assert np.all(raw >= 0)
    assert np.array_equal(pi != raw, raw > 1)
    assert (raw > 1).any()


def test_genotypes_never_missing():
    g, _, _ = simulate(small())
    assert not g.has_missing()
    assert set(np.unique(g.codes())) <= {0, 1, 2}


# --- k-means --------------------------------------------------------------------------


def test_kmeans_separated_pairs():
    s = np.array([[0, 0, 10, 10, -10, -10], [0, 0, 10, 10, 10, 10], [1, 1, 1, 1, 1, 1]], dtype=float)
    labels, _ = kmeans_columns(s, 3, seed=0)
    assert labels[0] == labels[1] and labels[2] == labels[3] and labels[4] == labels[5]
    assert len({labels[0], labels[2], labels[4]}) == 3
    assert set(labels) == {1, 2, 3}


def test_kmeans_single_cluster():
    s = np.random.default_rng(0).random((3, 40))
    labels, centroids = kmeans_columns(s, 1, seed=0)
    assert np.all(labels == 1)
    np.testing.assert_allclose(centroids[0], s.mean(axis=1))


def test_kmeans_beats_random_assignments():
    g = np.random.default_rng(1)
    pts = g.random((300, 3))
    labels, _, best = kmeans(pts, 3, rng.stream(0, "kmeans"))
    assert best == pytest.approx(wcss(pts, labels))
    random_wcss = [wcss(pts, g.integers(0, 3, 300)) for _ in range(1000)]
    assert best <= min(random_wcss)


def test_kmeans_too_few_distinct_points():
    pts = np.array([[0.0, 0, 0], [0, 0, 0], [1, 1, 1]])
    with pytest.raises(DataError):
        kmeans(pts, 3, rng.stream(0, "k"))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_kmeans_deterministic_and_labels_cover(seed, k):
    pts = np.random.default_rng(seed).random((30, 3))
    a = kmeans(pts, k, rng.stream(seed, "k"))
    b = kmeans(pts, k, rng.stream(seed, "k"))
    assert np.array_equal(a[0], b[0])
    assert set(a[0]) == set(range(k))


# --- traits --------------------------------------------------------------------------


def test_truth_invariants():
    g, pheno, truth = simulate(small(n_causal=10))
    assert truth.causal_indices.tolist() == list(range(10))
    assert np.all(truth.beta[10:] == 0)
    assert np.all(truth.lambda_ == truth.cluster)
    assert np.array_equal(truth.sigma2, truth.tau2[truth.cluster - 1])
    assert set(truth.cluster) <= {1, 2, 3}
    assert np.all((truth.pi >= 0) & (truth.pi <= 1))
    assert pheno.trait_kind == "binary" and set(pheno.trait) <= {0.0, 1.0}
    assert pheno.covariate_names == ["cluster_2", "cluster_3"]
    np.testing.assert_array_equal(pheno.covariate("cluster_3"), truth.cluster == 3)


@pytest.mark.parametrize("m_big", [11, 300])
def test_causal_prefix_does_not_depend_on_snp_count(m_big):
    # the power check simulates only the causal prefix and relies on this
    g_small, p_small, t_small = simulate(small(n_snps=10))
    g_big, p_big, t_big = simulate(small(n_snps=m_big))
    np.testing.assert_array_equal(g_small.codes(), g_big.codes()[:, :10])
    np.testing.assert_array_equal(p_small.trait, p_big.trait)
    np.testing.assert_array_equal(t_small.beta, t_big.beta[:10])
    np.testing.assert_array_equal(t_small.cluster, t_big.cluster)


def test_random_causal_placement():
    _, _, truth = simulate(small(causal_placement="random"))
    assert len(set(truth.causal_indices)) == 10
    assert np.all(truth.beta[np.setdiff1d(np.arange(50), truth.causal_indices)] == 0)


def test_inverse_gamma_mean():
    draws = sample_inverse_gamma(3.0, 1.0, 100_000, rng.stream(0, "tau2"))
    # variance of InvGamma(3, 1) is 1 / ((a-1)^2 (a-2)) = 1/4
    assert abs(draws.mean() - 0.5) < 4 * np.sqrt(0.25 / draws.size)
    assert np.all(draws > 0)


def test_zero_logit_is_fair_coin():
    y = draw_traits(np.zeros(10_000), rng.stream(1, "trait"))
    assert abs(y.mean() - 0.5) < 4 * np.sqrt(0.25 / y.size)


def test_prevalence_increases_with_cluster():
    cfg = SimConfig(n_samples=10_000, n_snps=20, a=1.0, n_causal=0, seed=11)
    gamma, s = sample_factors(cfg)
    g, _ = sample_genotypes(gamma, s, cfg.seed, return_pi=False)
    pheno, truth = sample_traits(g, cfg, gamma, s)
    prev = []
    for k in (1, 2, 3):
        yk = pheno.trait[truth.cluster == k]
        prev.append((yk.mean(), yk.size))
    for (p1, n1), (p2, n2) in zip(prev, prev[1:]):
        se = np.sqrt(p1 * (1 - p1) / n1 + p2 * (1 - p2) / n2)
        assert p2 - p1 > -4 * se
    assert prev[2][0] > prev[0][0]


def test_null_manifest():
    _, _, truth = simulate(small(n_causal=0))
    m = truth.manifest()
    assert m["causal_indices"] == [] and all(b == 0 for b in m["beta"])


def test_sample_traits_rejects_missing_genotypes():
    cfg = small(n_snps=12)
    gamma, s = sample_factors(cfg)
    codes = np.zeros((cfg.n_samples, 12), dtype=np.int8)
    codes[0, 0] = MISSING
    with pytest.raises(DataError):
        sample_traits(GenotypeMatrix.from_codes(codes), cfg, gamma, s)


# --- bundles ------------------------------------------------------------------------------


def test_bundle_byte_identical(tmp_path):
    cfg = small()
    a, b = make_benchmark(cfg, tmp_path / "a", sidecars=True), make_benchmark(cfg, tmp_path / "b", sidecars=True)
    for name in ("genotypes.gwdl", "phenotypes.tsv", "truth.json", "gamma.f64", "s.f64"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "truth.json").read_text())
    assert set(manifest) == {"causal_indices", "beta", "lambda", "sigma2", "tau2", "cluster", "config"}
    gamma = np.frombuffer((a / "gamma.f64").read_bytes(), "<f8").reshape(50, 3)
    assert np.all(gamma[:, 2] == 0.5)


def test_default_grid_is_twenty_bundles(tmp_path):
    dirs = set()
    for a in (0.01, 0.1, 0.5, 1.0):
        for seed in range(5):
            out = make_benchmark(SimConfig(40, 12, a, 10, seed), tmp_path / f"a{a}" / f"d{seed}")
            dirs.add(out)
    assert len(dirs) == 20
    assert all((d / "truth.json").exists() for d in dirs)
