"""Categorical, relaxed categorical, Gaussian and discretised-logistic densities.

Categorical distributions are always carried as normalised log-probability
rows (last axis = categories); all arithmetic stays in the log domain.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .tensor import ShapeError, Tensor, _unbroadcast, make_op

LOG_SCALE_MIN, LOG_SCALE_MAX = -7.0, 7.0
GUMBEL_EPS_LO, GUMBEL_EPS_HI = 1e-20, 1.0 - 1e-7
HALF_BIN = 1.0 / 510.0
LOG_PMF_FLOOR = math.log(1e-12)
N_LEVELS = 256


# -- categorical ----------------------------------------------------------------
def _check_rows(op: str, q: Tensor, p: Tensor) -> None:
    if q.shape != p.shape:
        raise ShapeError(op, q.shape, p.shape)


def categorical_entropy(log_probs: Tensor) -> Tensor:
    """Entropy in nats of each row."""
    return -(log_probs.exp() * log_probs).sum(axis=-1)


def kl_categorical(q_log_probs: Tensor, p_log_probs: Tensor) -> Tensor:
    """Row-wise KL(q || p) in nats."""
    _check_rows("kl_categorical", q_log_probs, p_log_probs)
    return (q_log_probs.exp() * (q_log_probs - p_log_probs)).sum(axis=-1)


def cross_entropy_categorical(q_log_probs: Tensor, p_log_probs: Tensor) -> Tensor:
    """Row-wise cross entropy H(q, p) = -sum_k q_k log p_k."""
    _check_rows("cross_entropy_categorical", q_log_probs, p_log_probs)
    return -(q_log_probs.exp() * p_log_probs).sum(axis=-1)


def uniform_log_probs(rows: int, k: int) -> Tensor:
    return Tensor(np.full((rows, k), -math.log(k)))


def gumbel_noise(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.random(shape), GUMBEL_EPS_LO, GUMBEL_EPS_HI)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(
    log_probs: Tensor, tau: float, rng: np.random.Generator, noise: np.ndarray | None = None,
) -> Tensor:
    """Differentiable relaxed sample ``softmax((log pi + g) / tau)``.

    ``noise`` may be passed to reuse fixed Gumbel draws (common random numbers).
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    g = gumbel_noise(log_probs.shape, rng) if noise is None else noise
    return ((log_probs + Tensor(g)) * (1.0 / tau)).softmax(axis=-1)


def hard_sample(log_probs, rng: np.random.Generator) -> np.ndarray:
    """Exact categorical draws per row (Gumbel-max)."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return np.argmax(lp + gumbel_noise(lp.shape, rng), axis=-1)


def mode(log_probs) -> np.ndarray:
    """Argmax per row; ties resolve to the lowest index."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return np.argmax(lp, axis=-1)


def one_hot(indices: np.ndarray, k: int) -> np.ndarray:
    indices = np.asarray(indices)
    out = np.zeros(indices.shape + (k,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


# -- diagonal Gaussian ------------------------------------------------------------
class DiagonalGaussian(NamedTuple):
    mean: Tensor
    log_std: Tensor

    @classmethod
    def from_raw(cls, mean: Tensor, raw_log_std: Tensor) -> "DiagonalGaussian":
        return cls(mean, raw_log_std.clip(LOG_SCALE_MIN, LOG_SCALE_MAX))

    @classmethod
    def standard(cls, shape: tuple) -> "DiagonalGaussian":
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def gaussian_kl_std_normal(g: DiagonalGaussian) -> Tensor:
    """Elementwise KL(N(mu, sigma) || N(0, 1)); sum it over the axes you need."""
    return 0.5 * (g.mean.square() + (g.log_std * 2.0).exp() - 1.0) - g.log_std


def gaussian_kl(q: DiagonalGaussian, p: DiagonalGaussian) -> Tensor:
    """Elementwise KL between two diagonal Gaussians."""
    var_ratio = ((q.log_std - p.log_std) * 2.0).exp()
    mean_term = (q.mean - p.mean).square() / (p.log_std * 2.0).exp()
    return (p.log_std - q.log_std) + 0.5 * (var_ratio + mean_term - 1.0)


def gaussian_entropy(q: DiagonalGaussian) -> Tensor:
    return q.log_std + 0.5 * math.log(2.0 * math.pi * math.e)


def gaussian_cross_entropy(q: DiagonalGaussian, p: DiagonalGaussian) -> Tensor:
    """Elementwise H(q, p) = -E_q log p."""
    var_q = (q.log_std * 2.0).exp()
    var_p = (p.log_std * 2.0).exp()
    return p.log_std + 0.5 * math.log(2.0 * math.pi) + (var_q + (q.mean - p.mean).square()) / (var_p * 2.0)


def gaussian_rsample(g: DiagonalGaussian, rng: np.random.Generator, eps: np.ndarray | None = None) -> Tensor:
    if eps is None:
        eps = rng.standard_normal(g.mean.shape)
    return g.mean + g.log_std.exp() * Tensor(eps)


# -- discretised logistic -------------------------------------------------------------
def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _check_levels(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() > N_LEVELS - 1 or not np.all(np.equal(np.mod(x, 1), 0))):
        raise ValueError("pixel levels must be integers in [0, 255]")
    return x.astype(np.int64)


def discretized_logistic_logpmf(x: np.ndarray, mean: Tensor, log_scale: Tensor) -> Tensor:
    """Elementwise log-probability of 8-bit levels ``x`` under a discretised logistic.

    Levels map to ``u = x / 255``; each bin spans ``u +- 1/510`` and the two
    end bins absorb the tails, so the pmf sums to one over the 256 levels.
    ``log_scale`` broadcasts against ``mean`` (e.g. one value per channel).
    Results are floored at ``log(1e-12)``.
    """
    x = _check_levels(x)
    if x.shape != mean.shape:
        raise ShapeError("discretized_logistic_logpmf", x.shape, mean.shape)
    ls_shape = log_scale.shape
    mu = mean.data
    ls = np.broadcast_to(log_scale.data, mu.shape)
    inv_s = np.exp(-ls)
    c = x / (N_LEVELS - 1.0) - mu
    a = (c + HALF_BIN) * inv_s
    b = (c - HALF_BIN) * inv_s
    left = x == 0
    right = x == N_LEVELS - 1

    ls_a, ls_na = _log_sigmoid(a), _log_sigmoid(-a)
    ls_b, ls_nb = _log_sigmoid(b), _log_sigmoid(-b)
    # sigmoid(a) - sigmoid(b) = sigmoid(a) sigmoid(-b) (1 - exp(b - a)), with a > b
    mid = ls_a + ls_nb + np.log(-np.expm1(b - a))
    out = np.where(left, ls_a, np.where(right, ls_nb, mid))
    floored = out < LOG_PMF_FLOOR
    out = np.maximum(out, LOG_PMF_FLOOR)

    # d out / d a and d out / d b
    da = np.where(right, 0.0, np.where(left, np.exp(ls_na), np.exp(ls_a + ls_na - out)))
    db = np.where(left, 0.0, np.where(right, -np.exp(ls_b), -np.exp(ls_b + ls_nb - out)))
    da = np.where(floored, 0.0, da)
    db = np.where(floored, 0.0, db)

    def back(g):
        g_mu = -g * inv_s * (da + db)
        g_ls = -g * (a * da + b * db)
        return g_mu, _unbroadcast(g_ls, ls_shape)

    return make_op(out, (mean, log_scale), back, "discretized_logistic_logpmf")


def discretized_logistic_mean(mean: np.ndarray) -> np.ndarray:
    return np.clip(mean, 0.0, 1.0)


def discretized_logistic_pmf_table(mean: float, log_scale: float) -> np.ndarray:
    """Probabilities of all 256 levels for one subpixel (numpy only)."""
    levels = np.arange(N_LEVELS)
    lp = discretized_logistic_logpmf(
        levels, Tensor(np.full(N_LEVELS, float(mean))), Tensor(np.array(float(log_scale)))
    )
    return np.exp(lp.data)


def logistic_cdf(x: np.ndarray) -> np.ndarray:
    return expit(x)
