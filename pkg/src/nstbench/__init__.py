"""Neural style transfer engine with an iterations-per-minute benchmark harness."""

from .errors import (ConfigError, ContractError, FileIOError, FormatError, GeometryError, NSTError,
                     NumericError, ShapeError, SizeError, TapeMismatchError)
from .tensor import Backend, ConvParams, Tensor, float64_mode, tensor_new

__version__ = "0.1.0"

__all__ = [
    "Backend", "ConvParams", "Tensor", "float64_mode", "tensor_new",
    "NSTError", "ConfigError", "ContractError", "FileIOError", "FormatError", "GeometryError",
    "NumericError", "ShapeError", "SizeError", "TapeMismatchError",
]
