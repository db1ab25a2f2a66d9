"""Complex linear algebra and reverse-mode autodiff."""
from . import linalg
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all
from .optim import (OptimConfig, Params, adam_step, load_arrays, save_arrays,
                    save_params, sgd_step, step)

__all__ = list(_tensor_all) + [
    "linalg", "OptimConfig", "Params", "adam_step", "sgd_step", "step",
    "save_arrays", "load_arrays", "save_params",
]
