import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepgwas.attribute import (
    AttributionSummary,
    AttributionVector,
    ReferenceInput,
    aggregate_seeds,
    aggregate_tsv,
    attribute_split,
    compute_reference,
    deeplift_attribute,
    deeplift_batch,
    multiplier_rescale,
    multipliers_linear,
    read_scores,
    summarize,
    top_k,
    write_summary,
)
from deepgwas.errors import ConfigError, DataError
from deepgwas.genotype import MISSING, GenotypeMatrix
from deepgwas.neural import HEAD_BINARY, HEAD_REGRESSION, Layer, MlpModel, forward, sigmoid


def random_net(g, dims, act="relu", head=HEAD_BINARY):
    layers = [
        Layer(g.normal(size=(o, i)), g.normal(size=o), act if k < len(dims) - 2 else "identity")
        for k, (i, o) in enumerate(zip(dims[:-1], dims[1:]))
    ]
    return MlpModel(layers, head, dims[0])


def loop_oracle(model, x, ref):
    """Scalar-loop DeepLIFT: per-neuron rescale multipliers, chain rule written out
    one unit at a time (no matrix products)."""
    acts, acts_ref = [np.asarray(x, float)], [np.asarray(ref, float)]
    zs, zs_ref = [], []
    for layer in model.layers:
        w, b = layer.weight, layer.bias
        z = [sum(w[j, i] * acts[-1][i] for i in range(w.shape[1])) + b[j] for j in range(w.shape[0])]
        zr = [sum(w[j, i] * acts_ref[-1][i] for i in range(w.shape[1])) + b[j] for j in range(w.shape[0])]
        zs.append(z)
        zs_ref.append(zr)
        f = (lambda v: max(v, 0.0)) if layer.activation == "relu" else (lambda v: v)
        acts.append(np.array([f(v) for v in z]))
        acts_ref.append(np.array([f(v) for v in zr]))
    m = [1.0]  # multiplier of each unit of the current layer's output w.r.t. the target
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        if layer.activation == "relu":
            scaled = []
            for j, mj in enumerate(m):
                dz = zs[k][j] - zs_ref[k][j]
                if abs(dz) > 1e-7:
                    r = (max(zs[k][j], 0) - max(zs_ref[k][j], 0)) / dz
                else:
                    r = 1.0 if (zs[k][j] + zs_ref[k][j]) / 2 > 0 else 0.0
                scaled.append(mj * r)
            m = scaled
        w = layer.weight
        m = [sum(m[j] * w[j, i] for j in range(w.shape[0])) for i in range(w.shape[1])]
    return np.array(m) * (np.asarray(x) - np.asarray(ref))


# --- reference --------------------------------------------------------------------------------


def test_reference_examples():
    ref = compute_reference(np.array([[0, 2], [1, 2], [2, 2]]))
    assert ref.values.tolist() == [1.0, 2.0]
    again = compute_reference(ref.values[None, :])
    assert np.array_equal(again.values, ref.values)


def test_reference_from_matrix_skips_missing():
    m = GenotypeMatrix.from_codes([[0, 2], [MISSING, 2], [2, 2]])
    assert compute_reference(m).values.tolist() == [1.0, 2.0]


def test_reference_errors():
    with pytest.raises(DataError):
        compute_reference(np.zeros((0, 3)))
    with pytest.raises(DataError):
        compute_reference(GenotypeMatrix.from_codes([[MISSING, 1]]))


# --- rules ---------------------------------------------------------------------------------------


def test_linear_rule():
    assert multipliers_linear([[2, -1]]).tolist() == [[2, -1]]
    assert not multipliers_linear(np.zeros((2, 3))).any()


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_linear_rule_reproduces_output_difference(seed):
    g = np.random.default_rng(seed)
    w, b = g.normal(size=(4, 6)), g.normal(size=4)
    x, xr = g.normal(size=6), g.normal(size=6)
    dy = (w @ x + b) - (w @ xr + b)
    np.testing.assert_allclose(multipliers_linear(w) @ (x - xr), dy, atol=1e-12)


def test_rescale_examples():
    assert multiplier_rescale(2.0, -1.0, "relu") == pytest.approx(2 / 3)
    assert multiplier_rescale(3.0, 3.0, "relu") == 1.0
    assert multiplier_rescale(-3.0, -3.0, "relu") == 0.0
    assert multiplier_rescale(2.0, 0.0, "sigmoid") == pytest.approx((0.8807970779778823 - 0.5) / 2, abs=1e-12)


def test_rescale_fallback_is_midpoint_gradient():
    z = np.array([0.3, 0.3 + 5e-8])
    m = multiplier_rescale(z, 0.3, "sigmoid")
    p = sigmoid(np.array([0.3, 0.3 + 2.5e-8]))
    np.testing.assert_allclose(m, p * (1 - p), rtol=1e-12)


# --- attribution --------------------------------------------------------------------------------


def test_zero_delta_gives_zero_scores():
    g = np.random.default_rng(0)
    model = random_net(g, [5, 4, 3, 1])
    ref = ReferenceInput(g.normal(size=5))
    vec = deeplift_attribute(model, ref.values, ref)
    assert np.all(vec.scores == 0) and vec.delta_t == 0


def test_hand_built_network():
    # h = relu(x1 - 2 x2 + 0.5); t = 3 h - 1
    model = MlpModel(
        [Layer(np.array([[1.0, -2.0]]), np.array([0.5])), Layer(np.array([[3.0]]), np.array([-1.0]), "identity")],
        HEAD_BINARY,
        2,
    )
    ref = ReferenceInput(np.array([1.0, 1.0]))  # z_ref = -0.5, h_ref = 0, t_ref = -1
    x = np.array([2.0, 0.0])  # z = 2.5, h = 2.5, t = 6.5
    m_relu = (2.5 - 0.0) / (2.5 - (-0.5))
    expected = 3.0 * m_relu * np.array([1.0, -2.0]) * (x - ref.values)
    vec = deeplift_attribute(model, x, ref)
    np.testing.assert_allclose(vec.scores, expected, rtol=1e-14)
    assert vec.delta_t == pytest.approx(7.5)
    assert vec.scores.sum() == pytest.approx(7.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.integers(1, 6), min_size=1, max_size=3))
def test_matches_loop_oracle(seed, hidden):
    g = np.random.default_rng(seed)
    dims = [int(g.integers(1, 6)), *hidden, 1]
    model = random_net(g, dims)
    x, ref = g.normal(size=dims[0]), g.normal(size=dims[0])
    scores, _ = deeplift_batch(model, x, ReferenceInput(ref))
    np.testing.assert_allclose(scores[0], loop_oracle(model, x, ref), rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["logit", "output"]))
def test_summation_to_delta(seed, target):
    g = np.random.default_rng(seed)
    model = random_net(g, [8, 6, 5, 1])
    x = g.integers(0, 3, size=(4, 8)).astype(float)
    ref = ReferenceInput(g.uniform(0, 2, size=8))
    scores, delta = deeplift_batch(model, x, ref, target)
    assert np.all(np.abs(scores.sum(axis=1) - delta) <= 1e-5 * (1 + np.abs(delta)))
    t = forward(model, x).output
    t_ref = forward(model, ref.values).output[0]
    if target == "output":
        t, t_ref = sigmoid(t), float(sigmoid(np.array([t_ref]))[0])
    np.testing.assert_allclose(delta, t - t_ref, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_identity_network_equals_gradient_times_delta(seed, depth):
    g = np.random.default_rng(seed)
    dims = [6] + [int(g.integers(1, 6)) for _ in range(depth)] + [1]
    model = random_net(g, dims, act="identity")
    x, ref = g.normal(size=6), g.normal(size=6)
    product = np.eye(6)
    for layer in model.layers:
        product = layer.weight @ product
    scores, _ = deeplift_batch(model, x, ReferenceInput(ref))
    np.testing.assert_allclose(scores[0], product[0] * (x - ref), rtol=1e-10, atol=1e-12)
    # doubling the input difference doubles the scores
    doubled, _ = deeplift_batch(model, ref + 2 * (x - ref), ReferenceInput(ref))
    np.testing.assert_allclose(doubled, 2 * scores, rtol=1e-10, atol=1e-12)


def test_regression_head_output_target_is_logit():
    g = np.random.default_rng(3)
    model = random_net(g, [4, 3, 1], head=HEAD_REGRESSION)
    x, ref = g.normal(size=4), ReferenceInput(g.normal(size=4))
    a, _ = deeplift_batch(model, x, ref, "logit")
    b, _ = deeplift_batch(model, x, ref, "output")
    assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        deeplift_batch(model, x, ref, "probability")


def test_reference_length_checked():
    model = random_net(np.random.default_rng(0), [4, 2, 1])
    with pytest.raises(DataError):
        deeplift_batch(model, np.zeros(4), ReferenceInput(np.zeros(3)))


def test_split_attribution_preserves_order():
    g = np.random.default_rng(1)
    model = random_net(g, [5, 4, 1])
    x = g.normal(size=(50, 5))
    ref = ReferenceInput(x.mean(axis=0))
    idx = np.arange(49, -1, -3)
    full, _ = deeplift_batch(model, x[idx], ref)
    blocks = [b for b, _ in attribute_split(model, x, idx, ref, chunk=4)]
    np.testing.assert_array_equal(np.vstack(blocks), full)


# --- summaries ----------------------------------------------------------------------------------------


def test_summarize_examples():
    s = summarize(np.array([[1.0, -2.0]]))
    assert s.mean_abs.tolist() == [1.0, 2.0] and s.n_samples == 1
    s = summarize([AttributionVector(np.array([3.0]), 3.0), AttributionVector(np.array([-3.0]), -3.0)])
    assert s.mean_abs.tolist() == [3.0]
    with pytest.raises(DataError):
        summarize([])


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.integers(1, 9))
def test_summarize_streaming_equals_batch(seed, chunk):
    a = np.random.default_rng(seed).normal(size=(23, 4))
    streamed = summarize((a[i : i + chunk], None) for i in range(0, 23, chunk))
    assert np.allclose(streamed.mean_abs, np.abs(a).mean(axis=0), rtol=1e-14)
    assert np.all(streamed.mean_abs >= 0)


def test_top_k_examples():
    assert top_k(np.array([0, 3, 1, 2]), 2) == [1, 3]
    assert top_k(np.array([5.0, 5.0, 5.0]), 2) == [0, 1]
    assert top_k(np.array([0.1, 0.4, 0.2]), 3) == [1, 2, 0]
    with pytest.raises(ConfigError):
        top_k(np.zeros(3), 4)


def test_aggregate_identical_and_single():
    s = AttributionSummary(np.array([0.1, 0.5, 0.3]), 10, 0)
    agg = aggregate_seeds([s, AttributionSummary(s.mean_abs.copy(), 10, 1)], k=2)
    assert np.array_equal(agg.pooled_mean, s.mean_abs)
    one = aggregate_seeds([s], k=2)
    assert np.array_equal(one.pooled_mean, s.mean_abs) and one.per_seed_top == [[1, 2]]


def test_aggregate_keeps_per_seed_differences():
    a = AttributionSummary(np.array([1.0, 0.9, 0.0, 0.0]), 5, 0)
    b = AttributionSummary(np.array([0.0, 0.0, 0.8, 1.0]), 5, 1)
    agg = aggregate_seeds([a, b], k=2)
    assert agg.per_seed_top == [[0, 1], [3, 2]]
    assert agg.union_top() == [0, 1, 2, 3]
    assert agg.selection_frequency.tolist() == [0.5, 0.5, 0.5, 0.5]
    with pytest.raises(DataError):
        aggregate_seeds([a, AttributionSummary(np.zeros(3), 1, 2)])


def test_score_files_roundtrip(tmp_path):
    s = AttributionSummary(np.array([0.1, 1 / 3, math.pi]), 7, 0)
    write_summary(tmp_path / "seed_0.tsv", ["a", "b", "c"], s)
    ids, vals = read_scores(tmp_path / "seed_0.tsv")
    assert ids == ["a", "b", "c"] and np.array_equal(vals, s.mean_abs)
    agg = aggregate_seeds([s, AttributionSummary(s.mean_abs[::-1].copy(), 7, 4)], k=1)
    (tmp_path / "agg.tsv").write_text(aggregate_tsv(["a", "b", "c"], agg))
    header = (tmp_path / "agg.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["snp_id", "mean_abs_score", "seed_0", "seed_4", "selection_frequency"]
    _, freq = read_scores(tmp_path / "agg.tsv", "selection_frequency")
    assert freq.tolist() == [0.5, 0.0, 0.5]
