"""Dense 4-D tensor storage, precision mode and convolution geometry."""

from __future__ import annotations

import contextlib
import enum
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import GeometryError, NumericError, ShapeError, SizeError

_MAX_ELEMENTS = 2**62

_state = threading.local()
_alloc_hooks: list[Callable[[tuple[int, int, int, int]], None]] = []


def _dtype_name() -> str:
    return getattr(_state, "dtype", "float32")


def default_dtype() -> np.dtype:
    """Active compute precision (float32 unless inside :func:`float64_mode`)."""
    return np.dtype(_dtype_name())


@contextlib.contextmanager
def float64_mode():
    """Run tensor construction and kernels in 64-bit precision.

    Intended for finite-difference gradient checking only.
    """
    prev = _dtype_name()
    _state.dtype = "float64"
    try:
        yield
    finally:
        _state.dtype = prev


def add_allocation_hook(fn: Callable[[tuple[int, int, int, int]], None]) -> None:
    """Register ``fn(shape)`` to be called for every Tensor allocation."""
    _alloc_hooks.append(fn)


def remove_allocation_hook(fn) -> None:
    _alloc_hooks.remove(fn)


class Backend(str, enum.Enum):
    NAIVE = "naive"
    FAST = "fast"

    @classmethod
    def parse(cls, value: "Backend | str") -> "Backend":
        if isinstance(value, Backend):
            return value
        try:
            return cls(value)
        except ValueError:
            from .errors import ConfigError

            raise ConfigError(f"unknown backend {value!r}; expected naive or fast") from None


def _check_shape(shape: Iterable[int]) -> tuple[int, int, int, int]:
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ShapeError(f"tensor shape must have 4 dims, got {shape}")
    if any(d < 0 for d in shape):
        raise SizeError(f"negative dimension in {shape}")
    if math.prod(shape) > _MAX_ELEMENTS:
        raise SizeError(f"element count of {shape} overflows")
    return shape


class Tensor:
    """Immutable (n, c, h, w) array of reals.

    The underlying numpy buffer is marked read-only so a Tensor can be shared
    freely between threads and tape nodes.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray, *, copy: bool = True, dtype=None):
        dtype = default_dtype() if dtype is None else np.dtype(dtype)
        arr = np.array(data, dtype=dtype, copy=True if copy else None, order="C")
        _check_shape(arr.shape)
        arr.flags.writeable = False
        for hook in _alloc_hooks:
            hook(arr.shape)
        self.data = arr

    @classmethod
    def full(cls, shape, fill: float) -> "Tensor":
        shape = _check_shape(shape)
        return cls(np.full(shape, fill, dtype=default_dtype()), copy=False)

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls.full(shape, 0.0)

    @classmethod
    def from_data(cls, shape, data) -> "Tensor":
        """Build from a flat sequence laid out row-major in ``shape``."""
        shape = _check_shape(shape)
        flat = np.asarray(data, dtype=default_dtype()).ravel()
        if flat.size != math.prod(shape):
            raise ShapeError(f"data length {flat.size} does not match shape {shape} "
                             f"({math.prod(shape)} elements)")
        return cls(flat.reshape(shape))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """A writable copy of the data."""
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def tensor_new(shape, fill: float = 0.0) -> Tensor:
    return Tensor.full(shape, fill)


def wrap(arr: np.ndarray, what: str = "kernel") -> Tensor:
    """Wrap a freshly computed kernel result, rejecting NaN/Inf."""
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} produced non-finite values")
    return Tensor(arr, copy=False)


@dataclass(frozen=True)
class ConvParams:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "stride", "padding"):
            if getattr(self, name) < 0:
                raise GeometryError(f"{name} must be non-negative")
        if self.kernel_size < 1:
            raise GeometryError("kernel_size must be >= 1")
        if self.stride < 1:
            raise GeometryError("stride must be >= 1")

    def out_size(self, size: int) -> int:
        return window_out_size(size, self.kernel_size, self.stride, self.padding)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)


def window_out_size(size: int, k: int, s: int, p: int = 0) -> int:
    """Output extent of a k-window sliding with stride s over ``size`` + 2p."""
    span = size + 2 * p - k
    if span < 0 or span % s:
        raise GeometryError(
            f"window k={k} s={s} p={p} does not tile input size {size} "
            f"(({size}+2*{p}-{k})/{s}+1 is not a positive integer)")
    return span // s + 1
