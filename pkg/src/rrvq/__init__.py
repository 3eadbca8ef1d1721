"""Hierarchical discrete VAEs with relaxed-responsibility vector quantisation, in numpy."""
from .config import ConfigError, LayerSpec, ModelConfig, TrainSchedule, load_config
from .model import ElboReport, HierarchicalVAE, mixture_elbo_equivalence_check
from .tensor import NonFiniteError, ShapeError, Tensor, no_grad

__all__ = [
    "ConfigError", "ElboReport", "HierarchicalVAE", "LayerSpec", "ModelConfig", "NonFiniteError", "ShapeError",
    "Tensor", "TrainSchedule", "load_config", "mixture_elbo_equivalence_check", "no_grad",
]
__version__ = "0.1.0"
