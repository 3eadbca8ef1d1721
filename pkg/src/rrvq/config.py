"""Model and training configuration, plus the flat ``key = value`` file format.

A config file looks like::

    # two-layer model on 8x8 swatches
    image_side = 8
    d_e = 16
    layer.1.grid_side = 4
    layer.1.K = 16
    layer.2.grid_side = 2
    layer.2.K = 16
    lr_init = 2e-3

Layer keys are 1-based with layer 1 closest to the data.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field, fields

log = logging.getLogger(__name__)

LATENT_KINDS = ("discrete", "gaussian")
P_PARAMS = ("direct_cat", "embed_cat")
SIGMA_MODES = ("fixed_one", "learnt")
TOP_PRIORS = ("uniform", "learnt")
ENCODER_KINDS = ("conv_resnet", "mlp")
LIKELIHOODS = ("discretized_logistic", "categorical_256")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    grid_side: int
    K: int = 0

    @property
    def M(self) -> int:
        return self.grid_side * self.grid_side

    @property
    def bits_per_index(self) -> int:
        return math.ceil(math.log2(self.K)) if self.K > 1 else 0


def _choice(name: str, value, options) -> None:
    if value not in options:
        raise ConfigError(f"{name} must be one of {', '.join(options)}; got {value!r}")


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple[LayerSpec, ...] = (LayerSpec(4, 16),)
    image_side: int = 8
    d_e: int = 16
    channels: int = 32
    hidden: int = 256
    latent_kind: str = "discrete"
    p_param: str | None = None
    sigma_mode: str | None = None
    scalar_sigma: bool = False
    top_prior: str = "uniform"
    encoder_kind: str = "conv_resnet"
    likelihood: str = "discretized_logistic"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def n_dims(self) -> int:
        return 3 * self.image_side * self.image_side

    @property
    def discrete(self) -> bool:
        return self.latent_kind == "discrete"

    @property
    def p_mode(self) -> str:
        return self.p_param or "embed_cat"

    @property
    def sigma(self) -> str:
        return self.sigma_mode or "learnt"

    def validate(self) -> None:
        _choice("latent_kind", self.latent_kind, LATENT_KINDS)
        _choice("top_prior", self.top_prior, TOP_PRIORS)
        _choice("encoder_kind", self.encoder_kind, ENCODER_KINDS)
        _choice("likelihood", self.likelihood, LIKELIHOODS)
        if not self.layers:
            raise ConfigError("need at least one latent layer")
        if self.latent_kind == "gaussian":
            if self.p_param is not None or self.sigma_mode is not None or self.scalar_sigma:
                raise ConfigError("p_param, sigma_mode and scalar_sigma do not apply to gaussian latents")
        else:
            if self.p_param is not None:
                _choice("p_param", self.p_param, P_PARAMS)
            if self.sigma_mode is not None:
                _choice("sigma_mode", self.sigma_mode, SIGMA_MODES)
            for i, spec in enumerate(self.layers, 1):
                if spec.K < 2:
                    raise ConfigError(f"layer {i}: discrete latents need K >= 2, got {spec.K}")
        for n in ("image_side", "d_e", "channels", "hidden"):
            if getattr(self, n) < 1:
                raise ConfigError(f"{n} must be positive")
        first = self.layers[0].grid_side
        if first < 1 or self.image_side % first or not _is_pow2(self.image_side // first):
            raise ConfigError(
                f"layer 1 grid side {first} must divide image side {self.image_side} by a power of two")
        for i in range(1, self.L):
            lo, hi = self.layers[i - 1].grid_side, self.layers[i].grid_side
            if lo != 2 * hi:
                raise ConfigError(f"grid side must halve between layers {i} and {i + 1}: {lo} -> {hi}")

    def warn_unstable(self) -> None:
        if self.discrete and self.p_mode == "direct_cat" and self.sigma == "learnt" and self.L > 1:
            log.warning("direct_cat prior with learnt sigma is known to train unstably")

    # -- flat representation ----------------------------------------------------
    def to_flat(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(self):
            if f.name == "layers":
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            out[f.name] = _fmt(v)
        for i, spec in enumerate(self.layers, 1):
            out[f"layer.{i}.grid_side"] = str(spec.grid_side)
            out[f"layer.{i}.K"] = str(spec.K)
        return out

    def to_text(self) -> str:
        flat = self.to_flat()
        return "".join(f"{k} = {flat[k]}\n" for k in sorted(flat))

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        layers: dict[int, dict[str, int]] = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in flat.items():
            if key.startswith("layer."):
                parts = key.split(".")
                if len(parts) != 3 or parts[2] not in ("grid_side", "K") or not parts[1].isdigit():
                    raise ConfigError(f"bad layer key {key!r}")
                layers.setdefault(int(parts[1]), {})[parts[2]] = _parse_int(key, raw)
            elif key in types and key != "layers":
                kwargs[key] = _convert(key, raw, types[key])
            else:
                raise ConfigError(f"unknown model key {key!r}")
        if layers:
            idx = sorted(layers)
            if idx != list(range(1, len(idx) + 1)):
                raise ConfigError(f"layer indices must be 1..L, got {idx}")
            kwargs["layers"] = tuple(
                LayerSpec(grid_side=layers[i].get("grid_side", 0), K=layers[i].get("K", 0)) for i in idx)
        return cls(**kwargs)

    def diff(self, other: "ModelConfig") -> dict[str, tuple]:
        a, b = self.to_flat(), other.to_flat()
        return {k: (a.get(k), b.get(k)) for k in sorted(set(a) | set(b)) if a.get(k) != b.get(k)}


@dataclass(frozen=True)
class TrainSchedule:
    lr_init: float = 2e-3
    lr_decay: float = 0.8
    patience: int = 5
    lr_min: float = 5e-5
    max_epochs: int = 200
    batch_size: int = 64
    free_bits: float = 0.1
    tau_init: float = 1.0
    tau_min: float = 0.25
    tau_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_init:
            raise ConfigError("need 0 < lr_min <= lr_init")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.tau_min > 0 or self.tau_init < self.tau_min:
            raise ConfigError("need 0 < tau_min <= tau_init")
        if self.free_bits < 0:
            raise ConfigError("free_bits must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")

    def to_flat(self) -> dict[str, str]:
        return {f.name: _fmt(getattr(self, f.name)) for f in fields(self) if getattr(self, f.name) is not None}

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "TrainSchedule":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in flat.items():
            if key not in types:
                raise ConfigError(f"unknown schedule key {key!r}")
            kwargs[key] = _convert(key, raw, types[key])
        return cls(**kwargs)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _convert(key: str, raw: str, typ) -> object:
    typ = str(typ)
    if raw.lower() in ("none", "") and "None" in typ:
        return None
    try:
        if typ.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return raw.lower() in ("true", "1", "yes")
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    flat: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = value
    return flat


_SCHEDULE_KEYS = {f.name for f in fields(TrainSchedule)}


def split_flat(flat: dict[str, str]) -> tuple[dict[str, str], dict[str, str]]:
    model = {k: v for k, v in flat.items() if k not in _SCHEDULE_KEYS}
    sched = {k: v for k, v in flat.items() if k in _SCHEDULE_KEYS}
    return model, sched


def load_config(path) -> tuple[ModelConfig, TrainSchedule]:
    with open(path) as fh:
        flat = parse_config_text(fh.read())
    model, sched = split_flat(flat)
    return ModelConfig.from_flat(model), TrainSchedule.from_flat(sched)


def config_text(cfg: ModelConfig, schedule: TrainSchedule | None = None) -> str:
    flat = cfg.to_flat()
    if schedule is not None:
        flat.update(schedule.to_flat())
    return "".join(f"{k} = {flat[k]}\n" for k in sorted(flat))


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes)
