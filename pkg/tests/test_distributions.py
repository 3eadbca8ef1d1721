import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from rrvq import distributions as D
from rrvq.tensor import Tensor, grad_check, grad_check_params


def log_rows(rng, m, k, scale=2.0):
    logits = rng.standard_normal((m, k)) * scale
    return Tensor(logits - np.log(np.exp(logits).sum(axis=1, keepdims=True)))


# -- categorical --------------------------------------------------------------------
def test_entropy_extremes():
    assert D.categorical_entropy(D.uniform_log_probs(1, 256)).item() == pytest.approx(math.log(256), abs=1e-12)
    one_hot = np.full((1, 5), -np.inf)
    one_hot[0, 2] = 0.0
    lp = np.where(np.isfinite(one_hot), one_hot, -800.0)  # exp underflows to an exact zero
    assert D.categorical_entropy(Tensor(lp)).item() == 0.0


def test_entropy_of_worst_case_row_matches_direct_summation():
    K, d, delta = 256, 10.0, 1.0
    logits = np.array([-0.5 * d * d] + [-0.5 * (d + delta) ** 2] * (K - 1))
    lp = Tensor(logits - np.logaddexp.reduce(logits))
    mp.mp.dps = 40
    Z = mp.exp(-mp.mpf(d) ** 2 / 2) + (K - 1) * mp.exp(-mp.mpf(d + delta) ** 2 / 2)
    p = [mp.exp(mp.mpf(v)) / Z for v in logits[:2]]
    oracle = float(-(p[0] * mp.log(p[0]) + (K - 1) * p[1] * mp.log(p[1])))
    assert D.categorical_entropy(lp).item() == pytest.approx(oracle, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_entropy_bounds_and_kl_nonnegative(seed, k):
    r = np.random.default_rng(seed)
    q, p = log_rows(r, 4, k), log_rows(r, 4, k)
    h = D.categorical_entropy(q).data
    assert np.all(h >= -1e-12) and np.all(h <= math.log(k) + 1e-12)
    assert np.all(D.kl_categorical(q, p).data >= -1e-12)
    np.testing.assert_allclose(D.kl_categorical(q, q).data, 0.0, atol=1e-15)


def test_kl_matches_direct_summation(rng):
    q, p = log_rows(rng, 6, 8), log_rows(rng, 6, 8)
    mp.mp.dps = 30
    for row in range(6):
        oracle = mp.fsum(mp.exp(mp.mpf(a)) * (mp.mpf(a) - mp.mpf(b)) for a, b in zip(q.data[row], p.data[row]))
        assert D.kl_categorical(q, p).data[row] == pytest.approx(float(oracle), abs=1e-12)


def test_kl_of_one_hot_is_negative_log_prob(rng):
    p = log_rows(rng, 1, 6)
    q = np.full((1, 6), -1000.0)
    q[0, 4] = 0.0
    assert D.kl_categorical(Tensor(q), p).item() == pytest.approx(-p.data[0, 4], abs=1e-12)


def test_cross_entropy_minus_entropy_is_kl(rng):
    q, p = log_rows(rng, 5, 7), log_rows(rng, 5, 7)
    np.testing.assert_allclose(
        D.cross_entropy_categorical(q, p).data - D.categorical_entropy(q).data, D.kl_categorical(q, p).data,
        atol=1e-12)


def test_kl_shape_mismatch(rng):
    with pytest.raises(ValueError):
        D.kl_categorical(log_rows(rng, 2, 3), log_rows(rng, 2, 4))


def test_kl_gradients(rng):
    q_logits = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    p_logits = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    rep = grad_check_params(
        lambda: D.kl_categorical(q_logits.log_softmax(), p_logits.log_softmax()).sum(),
        {"q": q_logits, "p": p_logits}, step=1e-5, tol=1e-6)
    assert rep.passed, str(rep)


# -- sampling ------------------------------------------------------------------------------
def three_sigma_ok(counts, probs):
    n = counts.sum()
    sd = np.sqrt(n * probs * (1 - probs))
    return np.all(np.abs(counts - n * probs) <= 3 * sd + 1e-9)


def test_gumbel_softmax_low_temperature_frequencies():
    pi = np.array([0.05, 0.15, 0.3, 0.5])
    n = 100_000
    lp = Tensor(np.tile(np.log(pi), (n, 1)))
    w = D.gumbel_softmax_sample(lp, 1e-3, np.random.default_rng(2024)).data
    counts = np.bincount(w.argmax(axis=1), minlength=4)
    assert three_sigma_ok(counts, pi), counts


def test_gumbel_softmax_rows_on_simplex(rng):
    w = D.gumbel_softmax_sample(log_rows(rng, 50, 9), 0.7, rng).data
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert w.min() >= 0.0 and w.max() <= 1.0


def test_gumbel_softmax_one_hot_input_stays_one_hot(rng):
    lp = np.full((3, 4), -1e4)
    lp[:, 1] = 0.0
    w = D.gumbel_softmax_sample(Tensor(lp), 2.0, rng).data
    np.testing.assert_allclose(w, D.one_hot(np.ones(3, int), 4), atol=1e-9)


def test_gumbel_softmax_reproducible(rng):
    lp = log_rows(rng, 4, 5)
    a = D.gumbel_softmax_sample(lp, 0.5, np.random.default_rng(9)).data
    b = D.gumbel_softmax_sample(lp, 0.5, np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_gumbel_softmax_rejects_bad_temperature(rng, tau):
    with pytest.raises(ValueError):
        D.gumbel_softmax_sample(log_rows(rng, 1, 3), tau, rng)


def test_gumbel_softmax_gradient_with_common_noise(rng):
    logits = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    noise = D.gumbel_noise((4, 6), rng)
    target = Tensor(rng.standard_normal((4, 6)))
    rep = grad_check_params(
        lambda: (D.gumbel_softmax_sample(logits.log_softmax(), 0.6, None, noise=noise) * target).sum(),
        {"logits": logits}, step=1e-5, tol=1e-4)
    assert rep.passed, str(rep)


def test_hard_sample_uniform_frequencies():
    K, n = 8, 100_000
    idx = D.hard_sample(np.full((n, K), -math.log(K)), np.random.default_rng(77))
    assert three_sigma_ok(np.bincount(idx, minlength=K), np.full(K, 1.0 / K))


def test_mode_and_tie_rule():
    assert D.mode(np.log([[0.1, 0.7, 0.2]]))[0] == 1
    assert D.mode(np.log([[0.5, 0.5]]))[0] == 0


# -- Gaussian ---------------------------------------------------------------------------------
def gauss(mu, log_std):
    return D.DiagonalGaussian(Tensor(np.atleast_1d(mu)), Tensor(np.atleast_1d(log_std)))


def test_gaussian_kl_simple_values():
    assert D.gaussian_kl_std_normal(gauss(0.0, 0.0)).item() == 0.0
    assert D.gaussian_kl_std_normal(gauss(1.0, 0.0)).item() == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("mu,log_std", [(0.3, -0.4), (-1.2, 0.5), (2.0, -1.0)])
def test_gaussian_kl_matches_quadrature(mu, log_std):
    s = math.exp(log_std)
    q = stats.norm(mu, s)
    integrand = lambda z: q.pdf(z) * (q.logpdf(z) - stats.norm.logpdf(z))
    oracle, _ = integrate.quad(integrand, mu - 20 * s, mu + 20 * s, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert D.gaussian_kl_std_normal(gauss(mu, log_std)).item() == pytest.approx(oracle, abs=1e-6)


def test_general_gaussian_kl_and_decomposition(rng):
    q = gauss(rng.standard_normal(5), rng.standard_normal(5) * 0.3)
    p = gauss(rng.standard_normal(5), rng.standard_normal(5) * 0.3)
    np.testing.assert_allclose(D.gaussian_kl(q, D.DiagonalGaussian.standard((5,))).data,
                               D.gaussian_kl_std_normal(q).data, atol=1e-13)
    np.testing.assert_allclose(D.gaussian_cross_entropy(q, p).data - D.gaussian_entropy(q).data,
                               D.gaussian_kl(q, p).data, atol=1e-12)
    assert np.all(D.gaussian_kl(q, p).data >= 0)


def test_gaussian_log_std_clamped():
    g = D.DiagonalGaussian.from_raw(Tensor([0.0, 0.0]), Tensor([-20.0, 20.0]))
    np.testing.assert_array_equal(g.log_std.data, [-7.0, 7.0])


def test_gaussian_rsample_is_reparameterised(rng):
    mu = Tensor(rng.standard_normal(4), requires_grad=True)
    ls = Tensor(rng.standard_normal(4) * 0.2, requires_grad=True)
    eps = rng.standard_normal(4)
    z = D.gaussian_rsample(D.DiagonalGaussian(mu, ls), rng, eps=eps)
    np.testing.assert_allclose(z.data, mu.data + np.exp(ls.data) * eps)
    z.sum().backward()
    np.testing.assert_allclose(ls.grad, np.exp(ls.data) * eps)
    np.testing.assert_array_equal(mu.grad, np.ones(4))


# -- discretised logistic ---------------------------------------------------------------------------
@given(st.floats(-0.2, 1.2), st.floats(-6.0, 1.0))
def test_logistic_pmf_normalises(mu, log_s):
    assert D.discretized_logistic_pmf_table(mu, log_s).sum() == pytest.approx(1.0, abs=1e-7)


def test_logistic_pmf_matches_cdf_differences():
    mu, log_s = 0.37, -3.0
    s = math.exp(log_s)
    u = np.arange(256) / 255.0
    cdf = lambda v: stats.logistic.cdf(v, loc=mu, scale=s)
    oracle = cdf(u + 1 / 510) - cdf(u - 1 / 510)
    oracle[0], oracle[-1] = cdf(1 / 510), 1 - cdf(1 - 1 / 510)
    np.testing.assert_allclose(D.discretized_logistic_pmf_table(mu, log_s), oracle, rtol=1e-9, atol=1e-15)


def test_logistic_concentrates_on_bin():
    pmf = D.discretized_logistic_pmf_table(100 / 255.0, -12.0)
    assert pmf[100] > 0.999


def test_logistic_symmetric_about_half():
    pmf = D.discretized_logistic_pmf_table(0.5, -2.5)
    np.testing.assert_allclose(pmf, pmf[::-1], atol=1e-12)


def test_logistic_tails_are_finite_and_floored():
    lp = D.discretized_logistic_logpmf(np.array([255]), Tensor([0.0]), Tensor(-7.0)).data
    assert lp[0] == pytest.approx(D.LOG_PMF_FLOOR)


def test_logistic_rejects_bad_levels():
    for bad in ([256], [-1], [3.5]):
        with pytest.raises(ValueError):
            D.discretized_logistic_logpmf(np.array(bad), Tensor([0.5]), Tensor(0.0))


def test_logistic_gradients(rng):
    x = rng.integers(0, 256, size=(2, 3, 4))
    x[0, 0, :2] = [0, 255]
    mean = Tensor(rng.uniform(0.1, 0.9, size=x.shape), requires_grad=True)
    log_scale = Tensor(rng.uniform(-3, -1, size=(1, 3, 1)), requires_grad=True)
    rep = grad_check_params(lambda: D.discretized_logistic_logpmf(x, mean, log_scale).sum(),
                            {"mean": mean, "log_scale": log_scale}, step=1e-6, tol=1e-4)
    assert rep.passed, str(rep)
