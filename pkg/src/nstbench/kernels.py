"""Public kernel entry points: shape checking plus backend dispatch.

Forward kernels take and return :class:`Tensor`. The ``*_backward`` helpers
work on raw arrays and are used by the autodiff tape.
"""

from __future__ import annotations

import numpy as np

from . import _fast, _naive
from .errors import GeometryError, ShapeError
from .tensor import Backend, ConvParams, Tensor, window_out_size, wrap

_IMPL = {Backend.NAIVE: _naive, Backend.FAST: _fast}

set_workers = _fast.set_workers
get_workers = _fast.get_workers


def _impl(backend):
    return _IMPL[Backend.parse(backend)]


def conv_output_shape(in_shape, params: ConvParams) -> tuple[int, int, int, int]:
    n, c, h, w = in_shape
    if c != params.in_channels:
        raise ShapeError(f"conv expects {params.in_channels} input channels, got {c}")
    return (n, params.out_channels, params.out_size(h), params.out_size(w))


def pool_output_shape(in_shape, k: int, s: int) -> tuple[int, int, int, int]:
    if k < 1 or s < 1:
        raise GeometryError(f"pool window k={k} s={s} must be positive")
    n, c, h, w = in_shape
    return (n, c, window_out_size(h, k, s), window_out_size(w, k, s))


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, params: ConvParams):
    out_shape = conv_output_shape(x.shape, params)
    if tuple(w.shape) != params.weight_shape:
        raise ShapeError(f"weight shape {tuple(w.shape)} does not match {params.weight_shape}")
    if b.size != params.out_channels:
        raise ShapeError(f"bias length {b.size} does not match out_channels {params.out_channels}")
    return out_shape


def conv2d_array(x, w, b, params: ConvParams, backend) -> np.ndarray:
    _check_conv(x, w, b, params)
    dt = x.dtype
    return _impl(backend).conv2d(x, w.astype(dt, copy=False), b.reshape(-1).astype(dt, copy=False),
                                 params.stride, params.padding)


def conv2d_exec(input: Tensor, weights: Tensor, bias: Tensor, params: ConvParams,
                backend=Backend.FAST) -> Tensor:
    """Cross-correlate ``input`` with ``weights`` (zero padding) and add ``bias``."""
    return wrap(conv2d_array(input.data, weights.data, bias.data, params, backend), "conv2d")


def conv2d_backward(dy, x, w, params: ConvParams, backend, *, need_input=True,
                    need_weight=False):
    """Return (grad_input, grad_weight, grad_bias); unrequested entries are None."""
    impl = _impl(backend)
    dt = dy.dtype
    w = w.astype(dt, copy=False)
    gx = gw = gb = None
    if need_input:
        gx = impl.conv2d_grad_input(dy, w, params.stride, params.padding, x.shape[2], x.shape[3])
    if need_weight:
        gw = impl.conv2d_grad_weight(x, dy, params.kernel_size, params.stride, params.padding)
        gb = dy.sum(axis=(0, 2, 3))
    return gx, gw, gb


def gemm(a, b, backend=Backend.FAST) -> np.ndarray:
    """Matrix product with a fixed, worker-count independent accumulation order."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"gemm needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"gemm inner dimensions differ: {a.shape} x {b.shape}")
    dt = np.result_type(a, b)
    out = _impl(backend).gemm(np.ascontiguousarray(a, dtype=dt), np.ascontiguousarray(b, dtype=dt))
    if not np.isfinite(out).all():
        from .errors import NumericError

        raise NumericError("gemm produced non-finite values")
    return out


def relu_exec(input: Tensor, backend=Backend.FAST) -> Tensor:
    return wrap(_impl(backend).relu(input.data), "relu")


def relu_backward(dy, x, backend):
    return _impl(backend).relu_grad(x, dy)


def avg_pool_array(x, k, s, backend):
    pool_output_shape(x.shape, k, s)
    return _impl(backend).avg_pool(x, k, s)


def avg_pool_exec(input: Tensor, k: int, s: int, backend=Backend.FAST) -> Tensor:
    return wrap(avg_pool_array(input.data, k, s, backend), "avg_pool")


def avg_pool_backward(dy, in_shape, k, s, backend):
    return _impl(backend).avg_pool_grad(dy, k, s, in_shape[2], in_shape[3])


def max_pool_array(x, k, s, backend):
    pool_output_shape(x.shape, k, s)
    return _impl(backend).max_pool(x, k, s)


def max_pool_exec(input: Tensor, k: int, s: int, backend=Backend.FAST) -> Tensor:
    return wrap(max_pool_array(input.data, k, s, backend), "max_pool")


def max_pool_backward(dy, x, k, s, backend):
    return _impl(backend).max_pool_grad(x, dy, k, s)
