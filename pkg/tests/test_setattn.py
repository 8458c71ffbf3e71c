import numpy as np
import pytest

from abundset.errors import ConfigError, DimensionError, EmptyInputError
from abundset.numerics import ParamStore, Tensor, tsum
from abundset.setattn import (SetTransformerConfig, encode_set, isab, mab, pma, pool_set,
                              record_attention_shapes, sab)

from helpers import gradient_errors, mab_reference

D = 8
CFG = SetTransformerConfig(input_dim=6, model_dim=D, heads=2, inducing_points=3, pma_seeds=2, encoder_blocks=2)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def store64(seed=0):
    return ParamStore(seed, np.float64)


def test_config_validation():
    with pytest.raises(ConfigError):
        SetTransformerConfig(model_dim=10, heads=4).validate()
    with pytest.raises(ConfigError):
        SetTransformerConfig(inducing_points=0).validate()
    assert SetTransformerConfig().validate().pooled_dim == 256


# -- mab -----------------------------------------------------------------------


def test_mab_row_permutation_of_queries_permutes_output(rng):
    x, y = rng.normal(size=(5, D)), rng.normal(size=(4, D))
    p = store64()
    perm = rng.permutation(5)
    np.testing.assert_allclose(mab(x[perm], y, p, config=CFG).data, mab(x, y, p, config=CFG).data[perm], atol=1e-12)


def test_mab_invariant_to_key_order(rng):
    x, y = rng.normal(size=(5, D)), rng.normal(size=(7, D))
    p = ParamStore(1)
    a = mab(x, y, p, config=CFG).data
    b = mab(x, y[rng.permutation(7)], p, config=CFG).data
    assert np.abs(a - b).max() < 1e-5


@pytest.mark.parametrize("n,m", [(1, 1), (3, 4)])
def test_mab_matches_single_head_reference(rng, n, m):
    cfg = SetTransformerConfig(input_dim=D, model_dim=D, heads=1)
    x, y = rng.normal(size=(n, D)), rng.normal(size=(m, D))
    p = store64(5)
    out = mab(x, y, p, "blk", cfg).data
    # perturb biases / gains away from their zero / one init so they are exercised
    for name, t in p.items():
        if name.endswith((".b", ".g")):
            t.data = t.data + rng.normal(scale=0.1, size=t.shape)
    out = mab(x, y, p, "blk", cfg).data
    np.testing.assert_allclose(out, mab_reference(x, y, p, "blk"), rtol=0, atol=1e-10)


def test_mab_dimension_mismatch():
    with pytest.raises(DimensionError):
        mab(np.ones((2, 4)), np.ones((2, 6)), store64(), config=SetTransformerConfig(heads=2))


# -- sab / isab ----------------------------------------------------------------


def test_sab_singleton_is_well_defined(rng):
    out = sab(rng.normal(size=(1, D)), store64(), config=CFG).data
    assert out.shape == (1, D) and np.isfinite(out).all()


def test_sab_duplicate_rows_give_identical_outputs(rng):
    x = rng.normal(size=(4, D))
    x[3] = x[1]
    out = sab(x, store64(), config=CFG).data
    np.testing.assert_array_equal(out[1], out[3])


def test_sab_equivariant(rng):
    x = rng.normal(size=(5, D))
    p = ParamStore(2)
    perm = rng.permutation(5)
    assert np.abs(sab(x[perm], p, config=CFG).data - sab(x, p, config=CFG).data[perm]).max() < 1e-5


def test_isab_equivariant(rng):
    x = rng.normal(size=(8, D))
    p = ParamStore(3)
    perm = rng.permutation(8)
    assert np.abs(isab(x[perm], p, config=CFG).data - isab(x, p, config=CFG).data[perm]).max() < 1e-5


def test_isab_more_inducing_points_than_rows(rng):
    cfg = SetTransformerConfig(input_dim=D, model_dim=D, heads=2, inducing_points=10)
    out = isab(rng.normal(size=(2, D)), store64(), config=cfg).data
    assert out.shape == (2, D) and np.isfinite(out).all()


def test_isab_identical_rows(rng):
    x = np.tile(rng.normal(size=(1, D)), (5, 1))
    out = isab(x, store64(), config=CFG).data
    np.testing.assert_allclose(out, np.tile(out[0], (5, 1)), atol=1e-12)


def test_isab_attention_is_never_quadratic(rng):
    n, m = 12, CFG.inducing_points
    with record_attention_shapes() as shapes:
        isab(rng.normal(size=(n, D)), store64(), config=CFG)
    assert sorted(shapes) == sorted([(m, n), (n, m)])
    assert (n, n) not in shapes


# -- pma -----------------------------------------------------------------------


def test_pma_permutation_invariant(rng):
    z = rng.normal(size=(9, D))
    p = ParamStore(4)
    a = pma(z, p, config=CFG).data
    assert a.shape == (CFG.pma_seeds, D)
    assert np.abs(pma(z[rng.permutation(9)], p, config=CFG).data - a).max() < 1e-5


def test_pma_singleton(rng):
    z = rng.normal(size=(1, D))
    p = store64()
    a = pma(z, p, config=CFG).data
    assert np.isfinite(a).all()
    np.testing.assert_array_equal(a, pma(z, p, config=CFG).data)


def test_pma_exact_doubling_unchanged(rng):
    z = rng.normal(size=(6, D))
    p = ParamStore(5)
    assert np.abs(pma(np.vstack([z, z]), p, config=CFG).data - pma(z, p, config=CFG).data).max() < 1e-5


# -- encode / pool -------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 3, 17])
def test_encode_shape(rng, n):
    assert encode_set(rng.normal(size=(n, 6)), CFG, ParamStore(0)).shape == (n, D)


def test_encode_empty_set():
    with pytest.raises(EmptyInputError):
        encode_set(np.zeros((0, 6)), CFG, ParamStore(0))


def test_encode_equivariant(rng):
    x = rng.normal(size=(10, 6))
    p = ParamStore(6)
    perm = rng.permutation(10)
    assert np.abs(encode_set(x[perm], CFG, p).data - encode_set(x, CFG, p).data[perm]).max() < 1e-5


def test_encode_seed_changes_output(rng):
    x = rng.normal(size=(4, 6))
    assert not np.allclose(encode_set(x, CFG, ParamStore(0)).data, encode_set(x, CFG, ParamStore(1)).data)


def test_pool_shapes():
    rng = np.random.default_rng(0)
    one = SetTransformerConfig(input_dim=6, model_dim=D, heads=2, inducing_points=3, pma_seeds=1)
    p = ParamStore(0)
    assert pool_set(encode_set(rng.normal(size=(5, 6)), one, p), one, p).shape == (D,)
    two = SetTransformerConfig(input_dim=6, model_dim=256, heads=4, inducing_points=4, pma_seeds=2)
    p = ParamStore(0)
    assert pool_set(encode_set(rng.normal(size=(3, 6)), two, p), two, p).shape == (512,)


def test_pool_invariant(rng):
    x = rng.normal(size=(11, 6))
    p = ParamStore(8)
    a = pool_set(encode_set(x, CFG, p), CFG, p).data
    b = pool_set(encode_set(x[rng.permutation(11)], CFG, p), CFG, p).data
    assert np.abs(a - b).max() < 1e-5


def test_pool_invariant_float64(rng):
    x = rng.normal(size=(11, 6))
    p = store64(8)
    a = pool_set(encode_set(x, CFG, p), CFG, p).data
    b = pool_set(encode_set(x[rng.permutation(11)], CFG, p), CFG, p).data
    assert np.abs(a - b).max() < 1e-10


# -- gradients -----------------------------------------------------------------

SMALL = SetTransformerConfig(input_dim=3, model_dim=4, heads=2, inducing_points=2, pma_seeds=2, encoder_blocks=1)


def _weighted(out, rng):
    return tsum(out * Tensor(rng.normal(size=out.shape)))


@pytest.mark.parametrize("block", ["mab", "sab", "isab", "pma", "encode+pool"])
def test_block_gradients(block):
    rng = np.random.default_rng(hash(block) % 2**32)
    p = store64(3)
    x = rng.normal(size=(4, SMALL.model_dim))
    y = rng.normal(size=(3, SMALL.model_dim))
    w = rng.normal(size=(16,))
    fns = {
        "mab": lambda: mab(x, y, p, config=SMALL),
        "sab": lambda: sab(x, p, config=SMALL),
        "isab": lambda: isab(x, p, config=SMALL),
        "pma": lambda: pma(x, p, config=SMALL),
        "encode+pool": lambda: pool_set(encode_set(x[:, :3], SMALL, p), SMALL, p),
    }
    fn = fns[block]
    out = fn()
    weights = Tensor(w[:out.data.size].reshape(out.shape))
    errors = gradient_errors(lambda: tsum(fn() * weights), p)
    assert max(errors.values()) < 1e-4, errors
