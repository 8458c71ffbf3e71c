import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abundset.aggregate import (Aggregator, Sample, SequenceRecord, apportion, average_pool, normalize_abundance,
                                repetition_expand, set_transformer_pool, weighted_average_pool,
                                weighted_set_transformer_pool)
from abundset.errors import ConfigError, DimensionError, EmptyInputError
from abundset.numerics import ParamStore
from abundset.setattn import SetTransformerConfig, encode_set

from helpers import apportion_bruteforce

CFG = SetTransformerConfig(input_dim=5, model_dim=8, heads=2, inducing_points=3, pma_seeds=2, encoder_blocks=1)


def sample(emb, ab, id="s"):
    return Sample(id, np.asarray(emb, dtype=float), np.asarray(ab, dtype=float))


def random_sample(rng, n, dim=5, integer=False):
    ab = rng.integers(1, 50, n) if integer else rng.lognormal(size=n)
    return sample(rng.normal(size=(n, dim)), ab)


# -- normalize_abundance -------------------------------------------------------


@pytest.mark.parametrize("ab,expected", [([1, 1, 1, 1], [0.25] * 4), ([3, 1], [0.75, 0.25]), ([7], [1.0])])
def test_normalize_examples(ab, expected):
    np.testing.assert_array_equal(normalize_abundance(sample(np.zeros((len(ab), 2)), ab)), expected)


def test_normalize_all_zero_is_degenerate():
    with pytest.raises(EmptyInputError):
        normalize_abundance(sample(np.zeros((2, 2)), [0, 0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=40))
def test_normalize_is_distribution(ab):
    w = normalize_abundance(sample(np.zeros((len(ab), 1)), ab))
    assert (w >= 0).all() and abs(w.sum() - 1) < 1e-9


def test_sample_shape_mismatch():
    with pytest.raises(DimensionError):
        sample(np.zeros((3, 2)), [1, 2])


def test_from_records_roundtrip():
    recs = [SequenceRecord(np.array([1.0, 2.0]), 3.0), SequenceRecord(np.array([0.0, 1.0]), 1.0)]
    s = Sample.from_records("x", recs, label=1)
    assert s.n_records == 2 and s.dim == 2 and s.label == 1
    assert [r.abundance for r in s.records] == [3.0, 1.0]
    with pytest.raises(EmptyInputError):
        Sample.from_records("y", [])


# -- averaging -----------------------------------------------------------------


def test_average_examples():
    e = np.array([[2.0, -1.0, 3.0]])
    np.testing.assert_array_equal(average_pool(sample(np.repeat(e, 4, 0), [1, 5, 2, 9])), e[0])
    np.testing.assert_array_equal(average_pool(sample([[1, 0], [0, 1]], [1, 1])), [0.5, 0.5])


def test_average_matches_loop_mean():
    rng = np.random.default_rng(0)
    s = random_sample(rng, 5)
    expected = [sum(s.embeddings[i, j] for i in range(5)) / 5 for j in range(s.dim)]
    np.testing.assert_allclose(average_pool(s), expected, rtol=0, atol=1e-15)


def test_average_empty():
    with pytest.raises(EmptyInputError):
        average_pool(Sample("e", np.zeros((0, 3)), np.zeros(0)))


def test_weighted_average_examples():
    np.testing.assert_array_equal(weighted_average_pool(sample([[1, 0], [0, 1]], [3, 1])), [0.75, 0.25])
    rng = np.random.default_rng(1)
    e = rng.normal(size=(4, 6))
    z = weighted_average_pool(sample(e, [1e9, 1, 1, 1]))
    assert np.abs(z - e[0]).max() < 1e-8


@pytest.mark.parametrize("n", [1, 2, 7, 33])
def test_weighted_average_reduces_to_average_bitwise(n):
    rng = np.random.default_rng(n)
    s = sample(rng.normal(size=(n, 9)), np.full(n, 4.5))
    assert np.array_equal(weighted_average_pool(s), average_pool(s))


def test_weighted_average_is_convex_combination():
    rng = np.random.default_rng(2)
    s = random_sample(rng, 10)
    z = weighted_average_pool(s)
    assert (z <= s.embeddings.max(0) + 1e-12).all() and (z >= s.embeddings.min(0) - 1e-12).all()


# -- apportionment -------------------------------------------------------------


def test_apportion_examples():
    assert apportion(sample(np.zeros((2, 1)), [0.5, 0.5]), 4).tolist() == [2, 2]
    assert apportion(sample(np.zeros((2, 1)), [0.75, 0.25]), 4).tolist() == [3, 1]
    assert apportion(sample(np.zeros((2, 1)), [3, 1]), 4).tolist() == [3, 1]


def test_apportion_ties_go_to_lower_index():
    assert apportion(sample(np.zeros((3, 1)), [1, 1, 1]), 4).tolist() == [2, 1, 1]
    assert apportion(sample(np.zeros((3, 1)), [1, 1, 1]), 5).tolist() == [2, 2, 1]


def test_apportion_budget_too_small():
    with pytest.raises(ConfigError) as err:
        apportion(sample(np.zeros((3, 1)), [1, 1, 1]), 2)
    assert err.value.field == "budget"


def test_apportion_tiny_abundance_keeps_one_copy():
    counts = apportion(sample(np.zeros((3, 1)), [1e6, 1, 1]), 10)
    assert counts.tolist() == [8, 1, 1]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=4), st.integers(0, 6))
def test_apportion_matches_bruteforce(ab, extra):
    budget = len(ab) + extra
    counts = apportion(sample(np.zeros((len(ab), 1)), ab), budget)
    assert counts.sum() == budget and counts.min() >= 1
    assert counts.tolist() == apportion_bruteforce(ab, budget)


def test_apportion_scale_free():
    ab = np.array([5, 17, 2, 9, 1], dtype=float)
    base = apportion(sample(np.zeros((5, 1)), ab), 64)
    for c in (3, 1000, 0.125):
        assert apportion(sample(np.zeros((5, 1)), ab * c), 64).tolist() == base.tolist()


def test_repetition_expand_rows():
    e = np.arange(6.0).reshape(3, 2)
    out = repetition_expand(sample(e, [2, 1, 1]), 8)
    np.testing.assert_array_equal(out, e[[0, 0, 0, 0, 1, 1, 2, 2]])


# -- identity-encoder repetition law ------------------------------------------


def test_identity_repetition_equals_weighted_average_when_integral():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(1, 8))
        ab = rng.integers(1, 10, n).astype(float)
        budget = int(ab.sum()) * int(rng.integers(1, 4))
        s = sample(rng.normal(size=(n, 4)), ab)
        np.testing.assert_allclose(repetition_expand(s, budget).mean(0), weighted_average_pool(s), rtol=0,
                                   atol=1e-14)


def test_identity_repetition_exact_with_dyadic_values():
    # powers of two keep every sum exact so the law holds bit for bit
    e = np.array([[1.0, -2.0], [0.5, 4.0], [8.0, 0.25]])
    s = sample(e, [4, 2, 2])
    assert np.array_equal(repetition_expand(s, 8).mean(0), weighted_average_pool(s))


def test_identity_repetition_error_bound():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        s = random_sample(rng, n, dim=3)
        budget = int(rng.integers(n, 64))
        counts = apportion(s, budget)
        alpha = normalize_abundance(s)
        # triangle inequality: total weight error times the largest row norm
        bound = np.abs(counts / budget - alpha).sum() * np.linalg.norm(s.embeddings, axis=1).max()
        dev = np.abs(repetition_expand(s, budget).mean(0) - weighted_average_pool(s)).max()
        assert dev <= bound + 1e-12


# -- transformer strategies ----------------------------------------------------


def test_set_transformer_output_length_default_config():
    cfg = SetTransformerConfig(input_dim=5)
    rng = np.random.default_rng(0)
    z = set_transformer_pool(random_sample(rng, 3), cfg, ParamStore(0), 16)
    assert z.shape == (256,) and np.isfinite(z.data).all()


def test_set_transformer_permutation_invariant():
    rng = np.random.default_rng(6)
    p = ParamStore(1)
    s = random_sample(rng, 9)
    a = set_transformer_pool(s, CFG, p, 64).data
    b = set_transformer_pool(s.permuted(rng.permutation(9)), CFG, p, 64).data
    assert np.abs(a - b).max() < 1e-5


def test_set_transformer_equal_abundance_doubling():
    rng = np.random.default_rng(7)
    s = sample(rng.normal(size=(6, 5)), np.ones(6))
    p = ParamStore(2, np.float64)
    doubled = set_transformer_pool(s, CFG, p, 12).data
    single = set_transformer_pool(s, CFG, p, 6).data
    assert np.abs(doubled - single).max() < 1e-5


def test_weighted_set_transformer_single_record_ignores_abundance():
    p = ParamStore(3, np.float64)
    e = np.random.default_rng(8).normal(size=(1, 5))
    o = encode_set(e, CFG, p).data[0]
    for a in (1.0, 1e-3, 5e5):
        np.testing.assert_array_equal(weighted_set_transformer_pool(sample(e, [a]), CFG, p).data, o)


def test_weighted_set_transformer_equal_abundance_is_mean_of_rows():
    rng = np.random.default_rng(9)
    p = ParamStore(4, np.float64)
    s = sample(rng.normal(size=(5, 5)), np.full(5, 3.0))
    o = encode_set(s.embeddings, CFG, p).data
    assert np.array_equal(weighted_set_transformer_pool(s, CFG, p).data, average_pool(sample(o, s.abundances)))


def test_weighted_set_transformer_composes_with_weighted_average():
    rng = np.random.default_rng(10)
    p = ParamStore(5, np.float64)
    for _ in range(10):
        s = random_sample(rng, int(rng.integers(1, 12)))
        o = encode_set(s.embeddings, CFG, p).data
        assert np.array_equal(weighted_set_transformer_pool(s, CFG, p).data,
                              weighted_average_pool(sample(o, s.abundances)))


def test_weighted_set_transformer_permutation_invariant_float64():
    rng = np.random.default_rng(11)
    p = ParamStore(6, np.float64)
    s = random_sample(rng, 14)
    a = weighted_set_transformer_pool(s, CFG, p).data
    b = weighted_set_transformer_pool(s.permuted(rng.permutation(14)), CFG, p).data
    assert np.abs(a - b).max() < 1e-10


@pytest.mark.parametrize("strategy", ["average", "weighted-average", "set-transformer", "weighted-set-transformer"])
def test_scaling_abundances_leaves_output_unchanged(strategy):
    rng = np.random.default_rng(12)
    s = random_sample(rng, 6, integer=True)
    agg = Aggregator(strategy, CFG, ParamStore(7, np.float64), budget=32)
    base = agg(s)
    for c in (0.5, 3.0, 1e4):
        np.testing.assert_allclose(agg(sample(s.embeddings, s.abundances * c)), base, rtol=0, atol=1e-12)


# -- Aggregator ----------------------------------------------------------------


def test_aggregator_output_dims():
    p = ParamStore(0)
    assert Aggregator("average", CFG).output_dim == 5
    assert Aggregator("set-transformer", CFG, p).output_dim == 16
    assert Aggregator("weighted-set-transformer", CFG, p).output_dim == 8
    assert Aggregator("average").trainable is False


def test_aggregator_rejects_unknown_and_incomplete():
    with pytest.raises(ConfigError):
        Aggregator("median")
    with pytest.raises(ConfigError):
        Aggregator("set-transformer", CFG)


def test_embed_all_stacks():
    rng = np.random.default_rng(13)
    samples = [random_sample(rng, n) for n in (1, 4, 9)]
    agg = Aggregator("weighted-set-transformer", CFG, ParamStore(0))
    out = agg.embed_all(samples)
    assert out.shape == (3, 8)
    np.testing.assert_array_equal(out[1], agg(samples[1]))
