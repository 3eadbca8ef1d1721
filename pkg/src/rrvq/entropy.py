"""Worst-case entropies of distance-based and logit-based categoricals.

All entropies are in nats. The worst case puts one category ahead of the
remaining ``K - 1`` by a fixed logit gap; the exact entropy of that two-level
distribution is evaluated with ``log1p`` so it stays accurate when the gap is
large and the entropy is tiny.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

MIN_COROLLARY_D = 10.0
MC_HEADER = ("d", "mean_H_nats", "min_H_nats", "worst_exact_nats", "worst_approx_nats")


def gap(d, delta):
    """Logit gap of the worst-case distance arrangement, ``delta^2/2 + delta*d``."""
    return 0.5 * np.square(delta) + np.multiply(delta, d)


def _two_level_entropy(K: int, top, rest):
    """Entropy of one logit ``top`` and ``K - 1`` logits ``rest``."""
    g = np.asarray(top, dtype=np.float64) - np.asarray(rest, dtype=np.float64)
    x = (K - 1) * np.exp(-g)
    lx = np.log1p(x)
    h = (lx + x * (g + lx)) / (1.0 + x)
    return h if np.ndim(h) else float(h)


def _check_K(K: int) -> None:
    if K < 2:
        raise ValueError(f"need K >= 2 categories, got {K}")


def exact_rvq_entropy(K: int, d, delta):
    """Exact entropy when the closest entry is at distance ``d`` and the rest at ``d + delta``."""
    _check_K(K)
    if np.any(np.asarray(delta) < 0):
        raise ValueError("delta must be non-negative")
    d = np.asarray(d, dtype=np.float64)
    return _two_level_entropy(K, -0.5 * d * d, -0.5 * (d + delta) ** 2)


def approx_rvq_entropy(K: int, d, delta):
    """First-order large-gap approximation ``(K-1)(1+g)exp(-g)``."""
    _check_K(K)
    g = gap(np.asarray(d, dtype=np.float64), delta)
    out = (K - 1) * (1.0 + g) * np.exp(-g)
    return out if np.ndim(out) else float(out)


def exact_softmax_entropy(K: int, ell, c: float = 0.0):
    """Exact entropy of softmax logits ``[c + ell, c, ..., c]``."""
    _check_K(K)
    ell = np.asarray(ell, dtype=np.float64)
    if np.any(ell < 0):
        raise ValueError("logit gap must be non-negative")
    return _two_level_entropy(K, c + ell, np.full_like(ell, c))


def approx_softmax_entropy(K: int, ell):
    _check_K(K)
    ell = np.asarray(ell, dtype=np.float64)
    out = (K - 1) * (1.0 + ell) * np.exp(-ell)
    return out if np.ndim(out) else float(out)


def entropy_of_logits(logits: np.ndarray) -> np.ndarray:
    """Entropy of ``softmax(logits)`` along the last axis."""
    lp = logits - logsumexp(logits, axis=-1, keepdims=True)
    return -(np.exp(lp) * lp).sum(axis=-1)


@dataclass(frozen=True)
class CorollaryReport:
    K: int
    d: float
    delta: float
    h_rvq: float
    h_softmax: float

    @property
    def rvq_higher(self) -> bool:
        return self.h_rvq > self.h_softmax

    @property
    def relative_gap(self) -> float:
        return (self.h_rvq - self.h_softmax) / max(self.h_rvq, self.h_softmax)


def corollary_compare(K: int, d: float, delta: float) -> CorollaryReport:
    """Compare exact worst-case entropies with the softmax logit gap set to ``d``."""
    if d < MIN_COROLLARY_D:
        raise ValueError(f"d={d} is outside the large-output regime (need d >= {MIN_COROLLARY_D:g})")
    return CorollaryReport(
        K=K, d=float(d), delta=float(delta),
        h_rvq=exact_rvq_entropy(K, d, delta),
        h_softmax=exact_softmax_entropy(K, d, 0.0),
    )


def entropy_curve(K: int, delta: float, d_values: Sequence[float], c: float = 0.0) -> list[dict]:
    """Exact and approximate worst-case entropies over a grid of distances."""
    rows = []
    for d in d_values:
        rows.append({
            "d": float(d),
            "rvq_exact_nats": exact_rvq_entropy(K, d, delta),
            "rvq_approx_nats": approx_rvq_entropy(K, d, delta),
            "softmax_exact_nats": exact_softmax_entropy(K, d, c),
            "softmax_approx_nats": approx_softmax_entropy(K, d),
        })
    for r in rows:
        r["rvq_exact_bits"] = r["rvq_exact_nats"] / math.log(2)
        r["softmax_exact_bits"] = r["softmax_exact_nats"] / math.log(2)
    return rows


# -- Monte Carlo over random codebooks ---------------------------------------------------
def sample_sphere(n: int, dim: int, radius: float, rng: np.random.Generator, solid: bool = False) -> np.ndarray:
    """``n`` points uniform on the sphere surface of ``radius`` (or inside the ball if ``solid``)."""
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    if solid:
        v *= rng.random((n, 1)) ** (1.0 / dim)
    return v * radius


@dataclass(frozen=True)
class MCRow:
    d: float
    mean_H: float
    min_H: float
    worst_exact: float
    worst_approx: float

    def as_tuple(self) -> tuple:
        return (self.d, self.mean_H, self.min_H, self.worst_exact, self.worst_approx)


def mc_codebook_entropy(
    d_grid: Sequence[float],
    trials: int,
    K: int = 256,
    d_e: int = 32,
    radius: float = 0.5,
    rng: np.random.Generator | None = None,
    solid: bool = False,
    chunk: int = 500,
) -> list[MCRow]:
    """Entropy of unit-variance distance responsibilities for random codebooks.

    For each distance ``d`` the query embedding sits at distance ``d`` from the
    codebook centre along a fresh random direction per trial. The worst-case
    columns use ``delta = 2 * radius``, the largest separation the codebook
    can have.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng() if rng is None else rng
    delta = 2.0 * radius
    rows = []
    for d in d_grid:
        ents = np.empty(trials)
        for start in range(0, trials, chunk):
            n = min(chunk, trials - start)
            books = sample_sphere(n * K, d_e, radius, rng, solid=solid).reshape(n, K, d_e)
            query = sample_sphere(n, d_e, 1.0, rng) * d
            d2 = ((books - query[:, None, :]) ** 2).sum(-1)
            ents[start:start + n] = entropy_of_logits(-0.5 * d2)
        rows.append(MCRow(
            d=float(d), mean_H=float(ents.mean()), min_H=float(ents.min()),
            worst_exact=float(exact_rvq_entropy(K, d, delta)),
            worst_approx=float(approx_rvq_entropy(K, d, delta)),
        ))
    return rows


def write_mc_csv(path, rows: Sequence[MCRow]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(MC_HEADER) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.12e}" for v in r.as_tuple()) + "\n")


def write_curve_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = list(rows[0].keys())
        writer.writerow(keys)
        for r in rows:
            writer.writerow([f"{r[k]:.12e}" for k in keys])
