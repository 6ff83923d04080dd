"""Minimal dense tensor engine: tape autodiff, kernels, gradient oracle, IO."""
from . import ops
from .gradcheck import GradCheckResult, grad_check
from .module import LayerNorm, Linear, Module, Parameter
from .parallel import get_num_threads, parallel_map, set_num_threads
from .rng import Rng
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "GradCheckResult",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "Rng",
    "ShapeError",
    "Tensor",
    "get_num_threads",
    "grad_check",
    "no_grad",
    "ops",
    "parallel_map",
    "set_num_threads",
]
