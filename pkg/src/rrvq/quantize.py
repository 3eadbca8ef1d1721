"""Codebooks and vector-quantisation rules.

Three ways of turning embeddings ``e`` (M x d_e rows) into a categorical over
K codebook entries:

* :func:`nearest_lookup` - deterministic nearest neighbour (one-hot).
* :func:`rvq_responsibilities` - softmax of ``-|e - E_k|^2 / 2`` (unit variances).
* :func:`rrvq_responsibilities` - Gaussian-mixture responsibilities with a
  learnt diagonal variance per entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import LOG_SCALE_MAX, LOG_SCALE_MIN, one_hot
from .tensor import ShapeError, Tensor

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Codebook:
    """Paired tables of means (K x d_e) and log-variances (K x d_e, or K x 1 when scalar)."""

    means: Tensor
    log_vars: Tensor
    learn_sigma: bool = True

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d_e(self) -> int:
        return self.means.shape[1]

    @property
    def scalar_sigma(self) -> bool:
        return self.log_vars.shape[1] == 1 and self.d_e != 1

    def project(self) -> None:
        """Restore invariants after an optimizer step."""
        if self.learn_sigma:
            np.clip(self.log_vars.data, LOG_SCALE_MIN, LOG_SCALE_MAX, out=self.log_vars.data)
        else:
            self.log_vars.data[...] = 0.0


def init_codebook(
    K: int, d_e: int, rng: np.random.Generator, learn_sigma: bool = True, scalar_sigma: bool = False,
) -> Codebook:
    """Means uniform on ``[-0.5/sqrt(d_e), 0.5/sqrt(d_e)]``, log-variances zero.

    The box keeps every pairwise distance below 1 at initialisation.
    """
    if K < 1 or d_e < 1:
        raise ValueError(f"codebook needs K >= 1 and d_e >= 1, got K={K}, d_e={d_e}")
    half = 0.5 / math.sqrt(d_e)
    means = Tensor(rng.uniform(-half, half, size=(K, d_e)), requires_grad=True)
    log_vars = Tensor(np.zeros((K, 1 if scalar_sigma else d_e)), requires_grad=learn_sigma)
    return Codebook(means, log_vars, learn_sigma=learn_sigma)


def _check_dim(op: str, e: Tensor, cb: Codebook) -> None:
    if e.ndim != 2 or e.shape[1] != cb.d_e:
        raise ShapeError(op, e.shape, cb.means.shape, detail="embedding dimension must match the codebook")


def _as_rows(e) -> Tensor:
    return e if isinstance(e, Tensor) else Tensor(e)


def nearest_lookup(e, cb: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Index of the closest codebook mean per row and the matching one-hot rows."""
    e = _as_rows(e)
    _check_dim("nearest_lookup", e, cb)
    d2 = ((e.data[:, None, :] - cb.means.data[None, :, :]) ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)
    return idx, one_hot(idx, cb.K)


def _sq_dist(e: Tensor, means: Tensor) -> Tensor:
    m, d = e.shape
    diff = e.reshape(m, 1, d) - means.reshape(1, means.shape[0], d)
    return diff.square()


def rvq_responsibilities(e, cb: Codebook) -> Tensor:
    """Log-probabilities ``log softmax_k(-|e - E_k|^2 / 2)``; variances are ignored."""
    e = _as_rows(e)
    _check_dim("rvq_responsibilities", e, cb)
    logits = _sq_dist(e, cb.means).sum(axis=-1) * -0.5
    return logits.log_softmax(axis=-1)


def rrvq_logits(e: Tensor, cb: Codebook) -> Tensor:
    """Unnormalised Gaussian log-densities ``log N(e | E_mu_k, diag(E_Sigma_k))``."""
    log_vars = cb.log_vars.clip(LOG_SCALE_MIN, LOG_SCALE_MAX)
    k, lv_d = log_vars.shape
    inv_var = (-log_vars).exp().reshape(1, k, lv_d)
    quad = (_sq_dist(e, cb.means) * inv_var).sum(axis=-1)
    log_det = log_vars.sum(axis=-1) * (cb.d_e / lv_d)
    return (quad + log_det.reshape(1, k) + cb.d_e * LOG_2PI) * -0.5


def rrvq_responsibilities(e, cb: Codebook) -> Tensor:
    """Responsibilities of an equal-weight diagonal Gaussian mixture, as log-probabilities."""
    e = _as_rows(e)
    _check_dim("rrvq_responsibilities", e, cb)
    return rrvq_logits(e, cb).log_softmax(axis=-1)


def embed(weights, cb: Codebook) -> Tensor:
    """Convex combination of codebook means; one-hot rows give exact codebook entries."""
    w = _as_rows(weights)
    if w.ndim != 2 or w.shape[1] != cb.K:
        raise ShapeError("embed", w.shape, cb.means.shape, detail="weight columns must equal K")
    return w @ cb.means
