import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import multivariate_normal

from rrvq.quantize import (
    Codebook, embed, init_codebook, nearest_lookup, rrvq_responsibilities, rvq_responsibilities,
)
from rrvq.tensor import ShapeError, Tensor, grad_check_params


def book(means, log_vars=None):
    means = np.asarray(means, dtype=float)
    lv = np.zeros_like(means) if log_vars is None else np.asarray(log_vars, dtype=float)
    return Codebook(Tensor(means, requires_grad=True), Tensor(lv, requires_grad=True))


def random_book(rng, K=6, d=3, sigma_spread=0.5):
    return book(rng.standard_normal((K, d)), rng.standard_normal((K, d)) * sigma_spread)


# -- nearest neighbour ------------------------------------------------------------------
def test_lookup_exact_entry(rng):
    cb = random_book(rng)
    idx, oh = nearest_lookup(cb.means.data[3:4], cb)
    assert idx[0] == 3 and oh[0].tolist() == [0, 0, 0, 1, 0, 0]


def test_lookup_tie_goes_to_lowest_index():
    cb = book([[1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
    assert nearest_lookup(np.zeros((1, 2)), cb)[0][0] == 0


def test_lookup_matches_exhaustive_scan(rng):
    cb = random_book(rng, K=16, d=4)
    e = rng.standard_normal((50, 4))
    idx, _ = nearest_lookup(e, cb)
    for m in range(50):
        dists = [sum((e[m, i] - cb.means.data[k, i]) ** 2 for i in range(4)) for k in range(16)]
        assert idx[m] == min(range(16), key=lambda k: (dists[k], k))


def test_lookup_dimension_mismatch(rng):
    with pytest.raises(ShapeError):
        nearest_lookup(np.zeros((2, 5)), random_book(rng))


# -- rVQ ----------------------------------------------------------------------------------
def test_rvq_equidistant_is_uniform():
    cb = book(np.eye(4))
    np.testing.assert_allclose(rvq_responsibilities(np.zeros((1, 4)), cb).data, math.log(0.25), atol=1e-15)


def test_rvq_two_entry_closed_form():
    cb = book([[0.0, 0.0], [1.0, 1.0]])  # distance sqrt(2) from the origin
    pi = np.exp(rvq_responsibilities(np.zeros((1, 2)), cb).data[0])
    np.testing.assert_allclose(pi, [0.7310585786300049, 0.2689414213699951], atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_rvq_translation_invariant(seed):
    r = np.random.default_rng(seed)
    cb = random_book(r)
    e = r.standard_normal((5, 3))
    shift = r.standard_normal(3) * 3
    moved = book(cb.means.data + shift)
    np.testing.assert_allclose(rvq_responsibilities(e + shift, moved).data, rvq_responsibilities(e, cb).data,
                               atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(1, 6))
def test_responsibility_rows_normalise(seed, K, d):
    r = np.random.default_rng(seed)
    cb = random_book(r, K, d, sigma_spread=2.0)
    e = r.standard_normal((7, d)) * 5
    for rule in (rvq_responsibilities, rrvq_responsibilities):
        np.testing.assert_allclose(np.exp(rule(e, cb).data).sum(axis=1), 1.0, atol=1e-12)


def test_lookup_is_argmax_of_rvq(rng):
    cb = random_book(rng, K=12, d=3)
    e = rng.standard_normal((200, 3))
    np.testing.assert_array_equal(nearest_lookup(e, cb)[0], rvq_responsibilities(e, cb).data.argmax(axis=1))


# -- RRVQ -----------------------------------------------------------------------------------
@given(st.integers(0, 2**32 - 1))
def test_rrvq_reduces_to_rvq_at_unit_variance(seed):
    r = np.random.default_rng(seed)
    cb = book(r.standard_normal((9, 4)))
    e = r.standard_normal((6, 4)) * 3
    np.testing.assert_allclose(rrvq_responsibilities(e, cb).data, rvq_responsibilities(e, cb).data, atol=1e-12)


def test_rrvq_matches_scipy_mixture(rng):
    cb = random_book(rng, K=5, d=3)
    e = rng.standard_normal((8, 3)) * 2
    dens = np.stack([multivariate_normal(cb.means.data[k], np.diag(np.exp(cb.log_vars.data[k]))).logpdf(e)
                     for k in range(5)], axis=1)
    oracle = dens - np.logaddexp.reduce(dens, axis=1, keepdims=True)
    np.testing.assert_allclose(rrvq_responsibilities(e, cb).data, oracle, atol=1e-12)


def test_rrvq_isotropic_scaling(rng):
    c = 2.7
    means = rng.standard_normal((6, 3))
    e = rng.standard_normal((4, 3))
    scaled = rrvq_responsibilities(e, book(means, np.full((6, 3), math.log(c))))
    plain = rvq_responsibilities(e / math.sqrt(c), book(means / math.sqrt(c)))
    np.testing.assert_allclose(scaled.data, plain.data, atol=1e-12)


def test_rrvq_permutation_equivariant(rng):
    cb = random_book(rng, K=7)
    perm = rng.permutation(7)
    e = rng.standard_normal((5, 3))
    permuted = book(cb.means.data[perm], cb.log_vars.data[perm])
    np.testing.assert_allclose(rrvq_responsibilities(e, permuted).data, rrvq_responsibilities(e, cb).data[:, perm],
                               atol=1e-12)


def test_broad_entry_wins_far_away_narrow_entry_wins_close():
    # two entries at the same mean; entry 1 has twice the variance
    cb = book([[0.0], [0.0]], [[0.0], [math.log(2.0)]])
    near = rrvq_responsibilities(np.array([[0.1]]), cb).data[0]
    far = rrvq_responsibilities(np.array([[5.0]]), cb).data[0]
    assert near[0] > near[1]
    assert far[1] > far[0]


def test_scalar_sigma_matches_shared_diagonal(rng):
    means = rng.standard_normal((4, 3))
    lv = rng.standard_normal((4, 1))
    e = rng.standard_normal((5, 3))
    np.testing.assert_allclose(rrvq_responsibilities(e, book(means, lv)).data,
                               rrvq_responsibilities(e, book(means, np.repeat(lv, 3, axis=1))).data, atol=1e-12)


def test_rrvq_gradients(rng):
    cb = random_book(rng, K=5, d=3)
    e = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    target = Tensor(rng.standard_normal((4, 5)))
    rep = grad_check_params(lambda: (rrvq_responsibilities(e, cb) * target).sum(),
                            {"e": e, "means": cb.means, "log_vars": cb.log_vars}, step=1e-5, tol=1e-4)
    assert rep.passed, str(rep)


def test_projection_clamps_or_freezes_variances():
    cb = book(np.zeros((2, 2)), [[9.0, -9.0], [0.5, 0.0]])
    cb.project()
    np.testing.assert_array_equal(cb.log_vars.data, [[7.0, -7.0], [0.5, 0.0]])
    cb.learn_sigma = False
    cb.project()
    assert not cb.log_vars.data.any()


# -- embedding and init ----------------------------------------------------------------------
def test_embed_one_hot_uniform_and_mixture(rng):
    cb = random_book(rng, K=4, d=3)
    np.testing.assert_array_equal(embed(np.eye(4)[[2]], cb).data[0], cb.means.data[2])
    np.testing.assert_allclose(embed(np.full((1, 4), 0.25), cb).data[0], cb.means.data.mean(axis=0), atol=1e-15)
    w = rng.dirichlet(np.ones(4))
    hand = sum(w[k] * cb.means.data[k] for k in range(4))
    np.testing.assert_allclose(embed(w[None], cb).data[0], hand, atol=1e-15)


def test_embed_shape_error(rng):
    with pytest.raises(ShapeError):
        embed(np.ones((1, 3)), random_book(rng, K=4))


def test_init_box_and_reproducibility():
    a = init_codebook(16, 9, np.random.default_rng(5))
    b = init_codebook(16, 9, np.random.default_rng(5))
    assert np.abs(a.means.data).max() <= 0.5 / 3
    np.testing.assert_array_equal(a.means.data, b.means.data)
    assert not a.log_vars.data.any()
    with pytest.raises(ValueError):
        init_codebook(0, 3, np.random.default_rng(0))


def test_init_mean_pairwise_distance():
    K, d = 256, 32
    cb = init_codebook(K, d, np.random.default_rng(8))
    m = cb.means.data
    d2 = ((m[:, None] - m[None]) ** 2).sum(-1)
    dist = np.sqrt(d2[np.triu_indices(K, 1)])
    # coordinate differences of two U(-a, a) draws have variance 2 a^2 / 3
    a = 0.5 / math.sqrt(d)
    mc = np.random.default_rng(9).uniform(-a, a, size=(200_000, 2, d))
    ref = np.linalg.norm(mc[:, 0] - mc[:, 1], axis=1)
    assert math.sqrt(d * 2 * a * a / 3) == pytest.approx(np.sqrt((ref ** 2).mean()), rel=1e-2)
    # pairs share points, so use the number of independent pairs K/2 for the spread
    se = ref.std() / math.sqrt(K / 2)
    assert abs(dist.mean() - ref.mean()) < 3 * se
    assert dist.max() < 1.0
