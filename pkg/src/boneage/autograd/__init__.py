from .tensor import Function, ShapeError, Tensor
from . import functional
from .gradcheck import directional_gradcheck, gradcheck, numeric_gradient, relative_error

__all__ = [
    "Function",
    "ShapeError",
    "Tensor",
    "functional",
    "directional_gradcheck",
    "gradcheck",
    "numeric_gradient",
    "relative_error",
]
