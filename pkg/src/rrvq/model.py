"""Hierarchical discrete VAE with ladder inference and shared top-down networks.

Layer 1 is closest to the data; layer L is the top. The bottom-up encoder
produces deterministic features ``dhat_l``. Both the posterior and the
generative model then walk the same top-down chain ``d_l``:

* prior of layer l: from ``pstrap_l(d_{l+1})`` (or uniform / a learnt
  ``d_top`` for the top layer),
* posterior of layer l: from ``qladder_l(dhat_l) + qstrap_l(d_{l+1})``,
* ``d_l = pladder_l(embedding of z_l) + dec_{l+1}(d_{l+1})``.

``pladder`` and ``dec`` are the same objects in both passes, so weights are
shared by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax as np_log_softmax, logsumexp
from scipy.stats import norm

from . import distributions as D
from .config import ConfigError, ModelConfig
from .nn import (Conv, ConvT, Dense, DenseResBlock, FromGrid, Params, ResBlock, Sequential, ToGrid)
from .quantize import Codebook, embed, init_codebook, rrvq_responsibilities, rvq_responsibilities
from .tensor import Tensor, no_grad

MODES = ("relaxed", "hard", "mode")
# embedding heads start small so posterior embeddings begin at codebook scale
HEAD_GAIN = 0.1


def to_rows(grid: Tensor) -> Tensor:
    """(N, C, g, g) -> (N*g*g, C)."""
    n, c = grid.shape[:2]
    return grid.transpose(0, 2, 3, 1).reshape(-1, c)


def from_rows(rows: Tensor, n: int, side: int) -> Tensor:
    return rows.reshape(n, side, side, rows.shape[1]).transpose(0, 3, 1, 2)


@dataclass
class LayerState:
    """Everything the top-down pass produced for one latent layer."""

    layer: int
    p: object  # log-prob rows (N*M, K) or DiagonalGaussian
    q: object = None
    weights: Tensor | None = None
    indices: np.ndarray | None = None  # (N, M)
    z: Tensor | None = None  # embedding grid (N, d_e, g, g)
    e_q: Tensor | None = None
    e_p: Tensor | None = None


@dataclass
class Pass:
    layers: list[LayerState]
    lik: Tensor  # raw likelihood head output

    def indices(self) -> dict[int, np.ndarray]:
        return {s.layer: s.indices for s in self.layers}


@dataclass
class ElboReport:
    """Per-image ELBO terms in nats; list entries are ordered layer 1 .. L."""

    recon_loglik: Tensor
    kl: list[Tensor]
    cross_entropy: list[Tensor]
    entropy: list[Tensor]
    n_dims: int
    extra: dict = field(default_factory=dict)

    @property
    def total_elbo(self) -> Tensor:
        total = self.recon_loglik
        for k in self.kl:
            total = total - k
        return total

    @property
    def elbo(self) -> float:
        return float(self.total_elbo.data.mean())

    @property
    def per_layer_kl(self) -> list[float]:
        return [float(k.data.mean()) for k in self.kl]

    @property
    def bpd(self) -> float:
        return -self.elbo / (self.n_dims * math.log(2.0))


class HierarchicalVAE:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int | None = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        cfg.validate()
        cfg.warn_unstable()
        self.cfg = cfg
        self.params: Params = {}
        self.codebooks: list[Codebook] = []
        if cfg.discrete:
            learn = cfg.sigma == "learnt"
            for i, spec in enumerate(cfg.layers, 1):
                cb = init_codebook(spec.K, cfg.d_e, rng, learn_sigma=learn, scalar_sigma=cfg.scalar_sigma)
                self.params[f"codebook.{i}.means"] = cb.means
                self.params[f"codebook.{i}.log_vars"] = cb.log_vars
                self.codebooks.append(cb)
        if cfg.encoder_kind == "mlp":
            self._build_mlp(rng)
        else:
            self._build_conv(rng)

    # -- construction ----------------------------------------------------------
    def _out_q(self) -> int:
        return self.cfg.d_e if self.cfg.discrete else 2 * self.cfg.d_e

    def _out_p(self, i: int) -> int:
        cfg = self.cfg
        if not cfg.discrete:
            return 2 * cfg.d_e
        return cfg.layers[i].K if cfg.p_mode == "direct_cat" else cfg.d_e

    def _lik_channels(self) -> int:
        # logistic: 3 mean logits then 3 log-scales per subpixel
        return 6 if self.cfg.likelihood == "discretized_logistic" else 3 * D.N_LEVELS

    def _build_conv(self, rng) -> None:
        cfg, P, C = self.cfg, self.params, self.cfg.channels
        L = cfg.L
        stages = int(round(math.log2(cfg.image_side // cfg.layers[0].grid_side)))
        first = [Conv(P, f"enc1.conv{j}", 3 if j == 0 else C, C, rng, stride=2) for j in range(stages)] \
            or [Conv(P, "enc1.conv0", 3, C, rng)]
        self.enc = [Sequential(*first, ResBlock(P, "enc1.res", C, rng))]
        self.enc += [ResBlock(P, f"enc{i + 1}", C, rng, resample="down") for i in range(1, L)]
        self.qladder = [_Head(Conv(P, f"qladder{i + 1}", C, self._out_q(), rng, gain=HEAD_GAIN)) for i in range(L)]
        self.qstrap = [_Head(ConvT(P, f"qstrap{i + 1}", C, self._out_q(), rng, gain=HEAD_GAIN)) for i in range(L - 1)]
        self.pstrap = [_Head(ConvT(P, f"pstrap{i + 1}", C, self._out_p(i), rng, gain=HEAD_GAIN)) for i in range(L - 1)]
        self.pladder = [Conv(P, f"pladder{i + 1}", cfg.d_e, C, rng) for i in range(L)]
        self.dec = [None] + [ResBlock(P, f"dec{i + 1}", C, rng, resample="up") for i in range(1, L)]
        ups = [_Head(ConvT(P, f"dec1.up{j}", C, C, rng)) for j in range(stages)]
        self.dec_out = Sequential(ResBlock(P, "dec1.res", C, rng), *ups,
                                  _Head(Conv(P, "dec1.out", C, self._lik_channels(), rng)), act_between=False)
        self.d_top = None
        if cfg.top_prior == "learnt":
            g = cfg.layers[-1].grid_side
            self.d_top = Tensor(rng.standard_normal((1, C, g, g)), requires_grad=True)
            P["d_top"] = self.d_top
            self.pstrap_top = _Head(Conv(P, f"pstrap{L}", C, self._out_p(L - 1), rng, gain=HEAD_GAIN))

    def _build_mlp(self, rng) -> None:
        cfg, P, H = self.cfg, self.params, self.cfg.hidden
        L, S = cfg.L, cfg.image_side
        g = [s.grid_side for s in cfg.layers]
        self.enc = [Sequential(_Flatten(), Dense(P, "enc1.in", 3 * S * S, H, rng), DenseResBlock(P, "enc1.res", H, rng),
                               act_between=False)]
        self.enc += [DenseResBlock(P, f"enc{i + 1}", H, rng) for i in range(1, L)]
        self.qladder = [ToGrid(P, f"qladder{i + 1}", H, self._out_q(), g[i], rng, gain=HEAD_GAIN) for i in range(L)]
        self.qstrap = [ToGrid(P, f"qstrap{i + 1}", H, self._out_q(), g[i], rng, gain=HEAD_GAIN) for i in range(L - 1)]
        self.pstrap = [ToGrid(P, f"pstrap{i + 1}", H, self._out_p(i), g[i], rng, gain=HEAD_GAIN) for i in range(L - 1)]
        self.pladder = [FromGrid(P, f"pladder{i + 1}", cfg.d_e, g[i], H, rng) for i in range(L)]
        self.dec = [None] + [DenseResBlock(P, f"dec{i + 1}", H, rng) for i in range(1, L)]
        self.dec_out = Sequential(DenseResBlock(P, "dec1.res", H, rng), ToGrid(P, "dec1.out", H, self._lik_channels(), S, rng),
                                  act_between=False)
        self.d_top = None
        if cfg.top_prior == "learnt":
            self.d_top = Tensor(rng.standard_normal((1, H)), requires_grad=True)
            P["d_top"] = self.d_top
            self.pstrap_top = ToGrid(P, f"pstrap{L}", H, self._out_p(L - 1), g[-1], rng, gain=HEAD_GAIN)

    # -- helpers -------------------------------------------------------------------
    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def project(self) -> None:
        for cb in self.codebooks:
            cb.project()

    def _input(self, x) -> Tensor:
        x = np.asarray(x)
        S = self.cfg.image_side
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (3, S, S):
            raise ConfigError(f"expected images of shape (N, 3, {S}, {S}), got {x.shape}")
        return Tensor(x / 127.5 - 1.0)

    def _bottom_up(self, x: Tensor) -> list[Tensor]:
        feats, h = [], x
        for enc in self.enc:
            h = enc(h)
            feats.append(h)
        return feats

    def _responsibilities(self, i: int, rows: Tensor) -> Tensor:
        cb = self.codebooks[i]
        if self.cfg.sigma == "learnt":
            return rrvq_responsibilities(rows, cb)
        return rvq_responsibilities(rows, cb)

    def _posterior(self, i: int, e_q: Tensor):
        rows = to_rows(e_q)
        if self.cfg.discrete:
            return self._responsibilities(i, rows)
        d = self.cfg.d_e
        return D.DiagonalGaussian.from_raw(rows[:, :d], rows[:, d:])

    def _prior(self, i: int, e_p: Tensor | None, n: int):
        cfg = self.cfg
        spec = cfg.layers[i]
        if e_p is None:
            if cfg.discrete:
                return D.uniform_log_probs(n * spec.M, spec.K)
            return D.DiagonalGaussian.standard((n * spec.M, cfg.d_e))
        rows = to_rows(e_p)
        if not cfg.discrete:
            d = cfg.d_e
            return D.DiagonalGaussian.from_raw(rows[:, :d], rows[:, d:])
        if cfg.p_mode == "direct_cat":
            return rows.log_softmax(axis=-1)
        return self._responsibilities(i, rows)

    def _choose(self, i: int, dist, mode: str, given, n: int, tau: float, rng):
        """Pick z for layer i from ``dist`` (or use ``given``); returns (z grid, weights, indices)."""
        cfg = self.cfg
        g = cfg.layers[i].grid_side
        if not cfg.discrete:
            if given is not None:
                rows = given if isinstance(given, Tensor) else Tensor(np.asarray(given, dtype=float))
            elif mode == "mode":
                rows = dist.mean
            else:
                rows = D.gaussian_rsample(dist, rng)
            return from_rows(rows, n, g), None, None
        K = cfg.layers[i].K
        if given is not None:
            idx = np.asarray(given).reshape(-1)
            if idx.size != n * g * g or idx.min() < 0 or idx.max() >= K:
                raise ConfigError(f"layer {i + 1}: latent indices must be {n}x{g * g} values in [0, {K})")
            weights = Tensor(D.one_hot(idx, K))
        elif mode == "relaxed":
            weights = D.gumbel_softmax_sample(dist, tau, rng)
            idx = D.mode(weights)
        elif mode == "hard":
            idx = D.hard_sample(dist, rng)
            weights = Tensor(D.one_hot(idx, K))
        elif mode == "mode":
            idx = D.mode(dist)
            weights = Tensor(D.one_hot(idx, K))
        else:
            raise ValueError(f"unknown sampling mode {mode!r}; expected one of {MODES}")
        z = from_rows(embed(weights, self.codebooks[i]), n, g)
        return z, weights, idx.reshape(n, g * g)

    def _broadcast_top(self, n: int) -> Tensor:
        return self.d_top + Tensor(np.zeros((n,) + self.d_top.shape[1:]))

    # -- the top-down pass ------------------------------------------------------------
    def _run(self, x, n: int, modes, latents: dict | None, tau: float, rng) -> Pass:
        cfg = self.cfg
        L = cfg.L
        latents = latents or {}
        if isinstance(modes, str):
            modes = [modes] * L
        dhat = self._bottom_up(self._input(x)) if x is not None else None
        states: list[LayerState | None] = [None] * L
        d_above = None
        for i in reversed(range(L)):
            if i == L - 1:
                e_p = self.pstrap_top(self._broadcast_top(n)) if self.d_top is not None else None
            else:
                e_p = self.pstrap[i](d_above)
            p = self._prior(i, e_p, n)
            e_q = q = None
            if dhat is not None:
                e_q = self.qladder[i](dhat[i])
                if i < L - 1:
                    e_q = e_q + self.qstrap[i](d_above)
                q = self._posterior(i, e_q)
            z, weights, idx = self._choose(i, q if q is not None else p, modes[i], latents.get(i + 1), n, tau, rng)
            d = self.pladder[i](z)
            if i < L - 1:
                d = d + self.dec[i + 1](d_above)
            elif self.d_top is not None:
                d = d + self.d_top
            states[i] = LayerState(layer=i + 1, p=p, q=q, weights=weights, indices=idx, z=z, e_q=e_q, e_p=e_p)
            d_above = d
        return Pass(layers=states, lik=self.dec_out(d_above))

    def posterior_pass(self, x, mode: str = "relaxed", rng=None, tau: float = 1.0, latents: dict | None = None) -> Pass:
        """Infer latents top-down from images ``x`` (N, 3, S, S) of 8-bit levels."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        n = self._input(x).shape[0]
        return self._run(x, n, mode, latents, tau, rng)

    def generative_pass(self, n: int = 1, rng=None, latents: dict | None = None, modes="hard",
                        tau: float = 1.0) -> Pass:
        """Ancestral pass through the prior; ``latents`` pins layers (1-based keys)."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        return self._run(None, n, modes, latents, tau, rng)

    # -- likelihood ---------------------------------------------------------------------
    def _lik_logpmf(self, x, lik: Tensor) -> Tensor:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if self.cfg.likelihood == "discretized_logistic":
            mean = lik[:, :3].sigmoid()
            lp = D.discretized_logistic_logpmf(x, mean, lik[:, 3:].clip(D.LOG_SCALE_MIN, D.LOG_SCALE_MAX))
            return lp.sum(axis=(1, 2, 3))
        n, _, S, _ = lik.shape
        logits = lik.reshape(n, 3, D.N_LEVELS, S, S).transpose(0, 1, 3, 4, 2).log_softmax(axis=-1)
        return (logits * Tensor(D.one_hot(x.astype(np.int64), D.N_LEVELS))).sum(axis=(1, 2, 3, 4))

    def likelihood_mean(self, lik: Tensor) -> np.ndarray:
        """Per-subpixel mean in [0, 1]."""
        if self.cfg.likelihood == "discretized_logistic":
            return D.discretized_logistic_mean(expit(lik.data[:, :3]))
        n, _, S, _ = lik.shape
        lp = np_log_softmax(lik.data.reshape(n, 3, D.N_LEVELS, S, S), axis=2)
        levels = np.arange(D.N_LEVELS).reshape(1, 1, -1, 1, 1)
        return (np.exp(lp) * levels).sum(axis=2) / (D.N_LEVELS - 1.0)

    # -- objectives ------------------------------------------------------------------------
    def elbo_from_pass(self, x, ps: Pass, collapse_q: bool) -> ElboReport:
        recon = self._lik_logpmf(x, ps.lik)
        n = recon.shape[0]
        kls, ces, ents = [], [], []
        for i, st in enumerate(ps.layers):
            M = self.cfg.layers[i].M
            if self.cfg.discrete:
                if collapse_q:
                    ce = -(Tensor(D.one_hot(st.indices.reshape(-1), st.p.shape[1])) * st.p).sum(axis=-1)
                    kl, ent = ce, Tensor(np.zeros(ce.shape))
                else:
                    kl = D.kl_categorical(st.q, st.p)
                    ce = D.cross_entropy_categorical(st.q, st.p)
                    ent = D.categorical_entropy(st.q)
            else:
                kl = D.gaussian_kl(st.q, st.p).sum(axis=-1)
                ce = D.gaussian_cross_entropy(st.q, st.p).sum(axis=-1)
                ent = D.gaussian_entropy(st.q).sum(axis=-1)
            kls.append(kl.reshape(n, M).sum(axis=1))
            ces.append(ce.reshape(n, M).sum(axis=1))
            ents.append(ent.reshape(n, M).sum(axis=1))
        return ElboReport(recon, kls, ces, ents, self.cfg.n_dims)

    def elbo(self, x, rng=None, mode: str = "relaxed", tau: float = 1.0, collapse_q: bool | None = None,
             n_samples: int = 1) -> ElboReport:
        """Single-sample (or averaged) ELBO estimate per image.

        ``relaxed`` conditions on Gumbel-Softmax samples and uses exact
        categorical KLs. ``hard``/``mode`` condition on discrete draws and, by
        default, treat the posterior as one-hot at the drawn index, which
        makes each draw a valid lower bound.
        """
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        if collapse_q is None:
            collapse_q = mode != "relaxed"
        reports = [self.elbo_from_pass(x, self.posterior_pass(x, mode, rng, tau), collapse_q)
                   for _ in range(n_samples)]
        if n_samples == 1:
            return reports[0]
        scale = 1.0 / n_samples

        def avg(ts):
            return sum(ts[1:], ts[0]) * scale

        return ElboReport(
            avg([r.recon_loglik for r in reports]),
            [avg([r.kl[l] for r in reports]) for l in range(self.cfg.L)],
            [avg([r.cross_entropy[l] for r in reports]) for l in range(self.cfg.L)],
            [avg([r.entropy[l] for r in reports]) for l in range(self.cfg.L)],
            self.cfg.n_dims,
        )

    def log_joint(self, x, latents: dict[int, np.ndarray]) -> np.ndarray:
        """``log p(x, z)`` per image for fully specified discrete latents."""
        x = np.asarray(x)
        n = x.shape[0]
        with no_grad():
            ps = self.generative_pass(n, latents=latents, modes="mode")
            total = self._lik_logpmf(x, ps.lik).data.copy()
            for st in ps.layers:
                total += _gather(st.p.data, st.indices).reshape(n, -1).sum(axis=1)
        return total

    def log_posterior(self, x, latents: dict[int, np.ndarray]) -> np.ndarray:
        """``log q(z | x)`` per image for fully specified discrete latents."""
        x = np.asarray(x)
        with no_grad():
            ps = self.posterior_pass(x, "mode", latents=latents)
            return sum(_gather(st.q.data, st.indices).reshape(x.shape[0], -1).sum(axis=1) for st in ps.layers)

    # -- images ----------------------------------------------------------------------------
    def decode(self, latents: dict[int, np.ndarray], n: int | None = None) -> np.ndarray:
        """Deterministically decode pinned latents to 8-bit images."""
        n = n or len(next(iter(latents.values())))
        with no_grad():
            ps = self.generative_pass(n, latents=latents, modes="mode")
        return to_levels(self.likelihood_mean(ps.lik))

    def reconstruct(self, x) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """Posterior-mode latents of ``x`` and their decoded 8-bit images."""
        with no_grad():
            ps = self.posterior_pass(x, "mode")
        return to_levels(self.likelihood_mean(ps.lik)), ps.indices()

    def sample(self, n: int, rng=None, mode: str = "hard") -> np.ndarray:
        """Ancestral samples as likelihood means in [0, 1]."""
        with no_grad():
            ps = self.generative_pass(n, rng=rng, modes=mode)
        return self.likelihood_mean(ps.lik)

    def layerwise_resample(self, x, layer: int, n: int, rng=None) -> tuple[np.ndarray, Pass]:
        """Resample one layer from its prior, keeping posterior modes above and prior modes below.

        Returns likelihood-mean images (n, 3, S, S) and the pass used.
        """
        L = self.cfg.L
        if not 1 <= layer <= L:
            raise ValueError(f"layer must be in 1..{L}, got {layer}")
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        with no_grad():
            post = self.posterior_pass(x[:1], "mode")
            pinned = {}
            for st in post.layers:
                if st.layer > layer:
                    if self.cfg.discrete:
                        pinned[st.layer] = np.repeat(st.indices, n, axis=0)
                    else:
                        pinned[st.layer] = Tensor(np.tile(to_rows(st.z).data, (n, 1)))
            modes = ["mode"] * L
            modes[layer - 1] = "hard"
            ps = self.generative_pass(n, rng=rng, latents=pinned, modes=modes)
        return self.likelihood_mean(ps.lik), ps


class _Head:
    """ELU followed by a layer; used where the input is a residual stream."""

    def __init__(self, layer):
        self.layer = layer

    def __call__(self, x: Tensor) -> Tensor:
        return self.layer(x.elu())


class _Flatten:
    def __call__(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)


def _gather(log_probs: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return np.take_along_axis(log_probs, indices.reshape(-1, 1), axis=1)[:, 0]


def to_levels(mean: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(mean * 255.0), 0, 255).astype(np.uint8)


# -- mixture-model view of the ELBO -------------------------------------------------------------
@dataclass
class EquivalenceReport:
    terms_direct: dict[str, np.ndarray]
    terms_mixture: dict[str, np.ndarray]
    tol: float

    @property
    def max_abs_diff(self) -> float:
        return max(float(np.max(np.abs(self.terms_direct[k] - self.terms_mixture[k]))) for k in self.terms_direct)

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tol


def _gmm_log_responsibilities(e: np.ndarray, means: np.ndarray, log_vars: np.ndarray) -> np.ndarray:
    """Posterior over components of an equal-weight diagonal Gaussian mixture."""
    K, d = means.shape
    std = np.sqrt(np.exp(np.broadcast_to(np.clip(log_vars, D.LOG_SCALE_MIN, D.LOG_SCALE_MAX), (K, d))))
    joint = np.stack([norm.logpdf(e, loc=means[k], scale=std[k]).sum(axis=1) for k in range(K)], axis=1)
    joint -= math.log(K)
    return joint - logsumexp(joint, axis=1, keepdims=True)


def _logistic_logpmf_np(x: np.ndarray, mean: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    u = x / 255.0
    s = np.exp(log_scale)
    plus = expit((u + D.HALF_BIN - mean) / s)
    minus = expit((u - D.HALF_BIN - mean) / s)
    pmf = np.where(x == 0, plus, np.where(x == 255, 1.0 - minus, plus - minus))
    return np.log(np.maximum(pmf, 1e-12))


def mixture_elbo_equivalence_check(model: HierarchicalVAE, x, tol: float = 1e-9) -> EquivalenceReport:
    """Recompute the ELBO with embeddings promoted to mixture latents and compare term by term.

    With delta-function ``q(e|z) = p(e|z)`` at the codebook means the extra
    embedding terms cancel; what remains must equal the direct ELBO for the
    same (posterior-mode) latents. The mixture route uses scipy densities, a
    row-indexed codebook lookup and a separate likelihood evaluation.
    """
    cfg = model.cfg
    if not cfg.discrete:
        raise ValueError("the mixture-model equivalence is only defined for discrete latents")
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    n = x.shape[0]
    with no_grad():
        ps = model.posterior_pass(x, "mode")
        rep = model.elbo_from_pass(x, ps, collapse_q=False)
        direct = {"recon": rep.recon_loglik.data}
        direct.update({f"kl{l + 1}": k.data for l, k in enumerate(rep.kl)})
        direct.update({f"embed{l + 1}": to_rows(st.z).data for l, st in enumerate(ps.layers)})

        latents = ps.indices()
        gen = model.generative_pass(n, latents=latents, modes="mode")
    mixture: dict[str, np.ndarray] = {}
    if cfg.likelihood == "discretized_logistic":
        mean = expit(gen.lik.data[:, :3])
        ls = np.clip(gen.lik.data[:, 3:], D.LOG_SCALE_MIN, D.LOG_SCALE_MAX)
        mixture["recon"] = _logistic_logpmf_np(x.astype(float), mean, ls).sum(axis=(1, 2, 3))
    else:
        S = cfg.image_side
        lp = np_log_softmax(gen.lik.data.reshape(n, 3, D.N_LEVELS, S, S), axis=2)
        mixture["recon"] = np.take_along_axis(lp, x[:, :, None].astype(np.int64), axis=2).sum(axis=(1, 2, 3, 4))
    for l, st in enumerate(ps.layers):
        cb = model.codebooks[l]
        means, log_vars = cb.means.data, cb.log_vars.data
        if cfg.sigma == "fixed_one":
            log_vars = np.zeros_like(log_vars)
        log_q = _gmm_log_responsibilities(to_rows(st.e_q).data, means, log_vars)
        if st.e_p is None:
            log_p = np.full_like(log_q, -math.log(cb.K))
        elif cfg.p_mode == "direct_cat":
            log_p = np_log_softmax(to_rows(st.e_p).data, axis=1)
        else:
            log_p = _gmm_log_responsibilities(to_rows(st.e_p).data, means, log_vars)
        kl_rows = (np.exp(log_q) * (log_q - log_p)).sum(axis=1)
        delta_terms = 0.0  # log q(e|z) - log p(e|z) with identical delta functions
        mixture[f"kl{l + 1}"] = kl_rows.reshape(n, -1).sum(axis=1) + delta_terms
        mixture[f"embed{l + 1}"] = means[st.indices.reshape(-1)]
    return EquivalenceReport(direct, mixture, tol)
