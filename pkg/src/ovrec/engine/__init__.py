from .tensor import Tensor, as_tensor, no_grad, parameter
from . import ops
from .optim import Adam

__all__ = ["Tensor", "as_tensor", "parameter", "no_grad", "ops", "Adam"]
