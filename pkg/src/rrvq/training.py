"""AdaMax, plateau learning-rate decay, free bits, temperature annealing and checkpoints."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig, TrainSchedule, parse_config_text
from .model import ElboReport, HierarchicalVAE
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

LOG_HEADER = ("epoch", "split", "elbo_nats", "bpd", "lr", "tau")


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name}; optimizer step aborted")
        self.name = name


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, checkpoint: str | None, log_rows: list):
        where = f"; last good checkpoint at {checkpoint}" if checkpoint else ""
        super().__init__(f"loss became NaN at epoch {epoch}, step {step}{where}")
        self.epoch, self.step, self.checkpoint, self.log_rows = epoch, step, checkpoint, log_rows


# -- optimisation ---------------------------------------------------------------------
class AdaMax:
    """AdaMax with bias-corrected first moment and an infinity-norm second moment."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.u = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items() if p.requires_grad and p.grad is not None}
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {self.params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(k)
        self.t += 1
        scale = self.lr / (1.0 - self.beta1 ** self.t)
        for k, g in grads.items():
            m, u = self.m[k], self.u[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            self.params[k].data -= scale * m / (u + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"optim/m/{k}": v for k, v in self.m.items()}
        out.update({f"optim/u/{k}": v for k, v in self.u.items()})
        out["optim/step"] = np.array(self.t, dtype=np.int64)
        out["optim/lr"] = np.array(self.lr, dtype=np.float64)
        return out

    def load_state(self, records: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k] = records[f"optim/m/{k}"].copy()
            self.u[k] = records[f"optim/u/{k}"].copy()
        self.t = int(records["optim/step"])
        self.lr = float(records["optim/lr"])


class PlateauScheduler:
    """Multiply the learning rate by ``decay`` after ``patience`` epochs without improvement."""

    def __init__(self, lr_init: float, decay: float = 0.8, patience: int = 5, lr_min: float = 5e-5):
        self.lr, self.decay, self.patience, self.lr_min = lr_init, decay, patience, lr_min
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, loss: float) -> bool:
        """Record an epoch's eval loss (lower is better); returns True if the rate decayed."""
        if loss < self.best:
            self.best, self.bad_epochs = loss, 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return False
        self.bad_epochs = 0
        new = max(self.lr * self.decay, self.lr_min)
        decayed = new < self.lr
        self.lr = new
        return decayed


def temperature(step: int, tau_init: float, tau_min: float, rate: float) -> float:
    return max(tau_min, tau_init * math.exp(-rate * step))


def default_tau_rate(schedule: TrainSchedule, total_steps: int) -> float:
    """Rate that brings the temperature to its floor halfway through training."""
    if schedule.tau_rate is not None:
        return schedule.tau_rate
    half = max(1.0, 0.5 * total_steps)
    return math.log(schedule.tau_init / schedule.tau_min) / half


def free_bits_objective(report: ElboReport, free_bits: float) -> Tensor:
    """Batch-mean loss ``-recon + sum_l max(KL_l, free_bits)`` in nats."""
    if free_bits < 0:
        raise ValueError("free_bits must be >= 0")
    loss = -report.recon_loglik.mean()
    for kl in report.kl:
        k = kl.mean()
        loss = loss + (k.maximum(free_bits) if free_bits > 0 else k)
    return loss


def bits_per_dim(elbo_nats: float, n_dims: int) -> float:
    return -elbo_nats / (n_dims * math.log(2.0))


# -- checkpoints ------------------------------------------------------------------------
MAGIC = b"RRVQ"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("int64"): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    cfg: ModelConfig
    tensors: dict[str, np.ndarray]

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.tensors.items() if k.startswith("param/")}

    def has_optimizer(self) -> bool:
        return "optim/step" in self.tensors


def _encode(cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    text = cfg.to_text().encode()
    buf.write(MAGIC + struct.pack("<II", VERSION, len(text)) + text)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"cannot store {name} with dtype {arr.dtype}")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)) + raw + struct.pack("<BB", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return buf.getvalue()


def save_checkpoint(path, model: HierarchicalVAE, optim: AdaMax | None = None) -> None:
    tensors = {f"param/{k}": p.data for k, p in model.params.items()}
    if optim is not None:
        tensors.update(optim.state())
    data = _encode(model.cfg, tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path, expected_cfg: ModelConfig | None = None) -> Checkpoint:
    """Parse a checkpoint completely before returning; any defect raises :class:`CheckpointError`."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, text_len = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig.from_flat(parse_config_text(r.take(text_len, "config").decode()))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from None
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = r.unpack("<I", f"record {i} name length")
        try:
            name = r.take(nlen, f"record {i} name").decode()
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: record {i} has a malformed name") from None
        tag, rank = r.unpack("<BB", f"{name} header")
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: {name} has unknown dtype tag {tag}")
        shape = r.unpack(f"<{rank}I", f"{name} extents")
        dt = _DTYPES[tag]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(r.take(size, f"{name} payload"), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes after the last record")
    if expected_cfg is not None and cfg != expected_cfg:
        diff = ", ".join(f"{k}: file={a} expected={b}" for k, (a, b) in cfg.diff(expected_cfg).items())
        raise CheckpointError(f"{path}: checkpoint config differs from the model: {diff}")
    return Checkpoint(cfg, tensors)


def restore_model(ckpt: Checkpoint | str | Path) -> HierarchicalVAE:
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    model = HierarchicalVAE(ckpt.cfg, rng=0)
    stored = ckpt.params
    missing = set(model.params) ^ set(stored)
    if missing:
        raise CheckpointError(f"parameter names do not match the model: {sorted(missing)[:5]}")
    for k, p in model.params.items():
        if stored[k].shape != p.shape:
            raise CheckpointError(f"parameter {k}: stored shape {stored[k].shape}, model expects {p.shape}")
        p.data[...] = stored[k]
    return model


# -- training loop -----------------------------------------------------------------------
@dataclass
class TrainResult:
    model: HierarchicalVAE
    log: list[dict] = field(default_factory=list)
    best_eval_elbo: float = -math.inf
    best_epoch: int = -1

    def final(self, split: str) -> dict:
        return [r for r in self.log if r["split"] == split][-1]


def evaluate(model: HierarchicalVAE, data: np.ndarray, rng: np.random.Generator, batch_size: int = 256,
             mode: str = "hard") -> float:
    """Mean per-image ELBO in nats (hard samples, one-hot posterior by default)."""
    total = 0.0
    with no_grad():
        for start in range(0, len(data), batch_size):
            rep = model.elbo(data[start:start + batch_size], rng=rng, mode=mode)
            total += float(rep.total_elbo.data.sum())
    return total / len(data)


def _write_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([r["epoch"], r["split"], f"{r['elbo_nats']:.10g}", f"{r['bpd']:.10g}",
                        f"{r['lr']:.10g}", f"{r['tau']:.10g}"])


def train(
    cfg: ModelConfig | HierarchicalVAE,
    schedule: TrainSchedule,
    train_data: np.ndarray,
    eval_data: np.ndarray,
    rng: np.random.Generator | int = 0,
    checkpoint_path=None,
    log_path=None,
    eval_mode: str = "hard",
) -> TrainResult:
    """Train with relaxed samples; evaluate, decay and checkpoint once per epoch.

    Deterministic given ``rng``. On a NaN loss the last good parameters are
    written to ``<checkpoint_path>.lastgood`` and :class:`TrainingDiverged`
    is raised.
    """
    if len(train_data) == 0 or len(eval_data) == 0:
        raise ValueError("training and evaluation sets must be non-empty")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    model = cfg if isinstance(cfg, HierarchicalVAE) else HierarchicalVAE(cfg, rng)
    params = model.trainable()
    optim = AdaMax(params, schedule.lr_init, schedule.beta1, schedule.beta2, schedule.eps)
    plateau = PlateauScheduler(schedule.lr_init, schedule.lr_decay, schedule.patience, schedule.lr_min)
    steps_per_epoch = math.ceil(len(train_data) / schedule.batch_size)
    tau_rate = default_tau_rate(schedule, steps_per_epoch * schedule.max_epochs)
    result = TrainResult(model)
    n_dims = model.cfg.n_dims
    step = 0
    last_good = {k: p.data.copy() for k, p in model.params.items()}

    def record(epoch, split, elbo, tau):
        row = dict(epoch=epoch, split=split, elbo_nats=elbo, bpd=bits_per_dim(elbo, n_dims), lr=optim.lr, tau=tau)
        result.log.append(row)
        log.info("epoch %d %s elbo %.4f bpd %.4f lr %.2e tau %.3f", epoch, split, elbo, row["bpd"], optim.lr, tau)

    for epoch in range(schedule.max_epochs):
        order = rng.permutation(len(train_data))
        total, tau = 0.0, temperature(step, schedule.tau_init, schedule.tau_min, tau_rate)
        for start in range(0, len(order), schedule.batch_size):
            batch = train_data[order[start:start + schedule.batch_size]]
            tau = temperature(step, schedule.tau_init, schedule.tau_min, tau_rate)
            for p in params.values():
                p.zero_grad()
            try:
                report = model.elbo(batch, rng=rng, mode="relaxed", tau=tau)
                loss = free_bits_objective(report, schedule.free_bits)
                bad = not math.isfinite(loss.item())
                if not bad:
                    loss.backward()
                    optim.step()
            except (FloatingPointError, ArithmeticError):
                bad = True
            if bad:
                dump = None
                if checkpoint_path is not None:
                    for k, p in model.params.items():
                        p.data[...] = last_good[k]
                    dump = f"{checkpoint_path}.lastgood"
                    save_checkpoint(dump, model)
                if log_path is not None:
                    _write_log(log_path, result.log)
                raise TrainingDiverged(epoch, step, dump, result.log)
            model.project()
            for k, p in model.params.items():
                last_good[k][...] = p.data
            total += float(report.total_elbo.data.sum())
            step += 1
        record(epoch, "train", total / len(train_data), tau)
        eval_elbo = evaluate(model, eval_data, rng, mode=eval_mode)
        record(epoch, "eval", eval_elbo, tau)
        if eval_elbo > result.best_eval_elbo:
            result.best_eval_elbo, result.best_epoch = eval_elbo, epoch
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, optim)
        plateau.step(-eval_elbo)
        optim.lr = plateau.lr
        if log_path is not None:
            _write_log(log_path, result.log)
    return result


def tiny_config(**changes) -> ModelConfig:
    """Two layers (2x2 and 1x1 grids), K=4, d_e=3, 4x4 images: small enough for exhaustive checks."""
    from .config import LayerSpec

    base = dict(layers=(LayerSpec(2, 4), LayerSpec(1, 4)), image_side=4, d_e=3, channels=4, hidden=8)
    base.update(changes)
    return ModelConfig(**base)


def elbo_grad_check(model: HierarchicalVAE, x: np.ndarray, seed: int = 0, tau: float = 0.5, step: float = 3e-4,
                    tol: float = 1e-4, floor: float = 1e-5, max_entries: int | None = None):
    """Finite-difference check of the batch-mean relaxed ELBO over every trainable parameter.

    Each evaluation reseeds the sampler, so all evaluations share the same
    Gumbel (or Gaussian) noise. Uses the five-point stencil; ``floor`` is the
    gradient magnitude below which deviations are judged in absolute terms,
    set by the round-off of an ELBO of a few hundred nats.
    """
    from .tensor import grad_check_params

    def f():
        return model.elbo(x, rng=np.random.default_rng(seed), mode="relaxed", tau=tau).total_elbo.mean()

    return grad_check_params(f, model.trainable(), step=step, tol=tol, floor=floor, max_entries=max_entries,
                             rng=np.random.default_rng(seed), order=4)
