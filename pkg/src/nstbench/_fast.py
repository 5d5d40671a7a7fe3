"""im2col + blocked GEMM kernels on top of numpy/BLAS.

GEMM is split into fixed 64-row blocks. The block boundaries never depend on
the worker count, so results are bit-identical however many threads run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ROW_BLOCK = 64

_workers = max(1, os.cpu_count() or 1)
_pool: ThreadPoolExecutor | None = None


def set_workers(n: int) -> None:
    global _workers, _pool
    if n < 1:
        raise ValueError("worker count must be >= 1")
    if n != _workers and _pool is not None:
        _pool.shutdown()
        _pool = None
    _workers = n


def get_workers() -> int:
    return _workers


def _executor() -> ThreadPoolExecutor:
    global _pool
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_workers, thread_name_prefix="nst-gemm")
    return _pool


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = a.shape[0]
    out = np.empty((m, b.shape[1]), dtype=np.result_type(a, b))
    starts = range(0, m, ROW_BLOCK)

    def block(r0):
        r1 = min(r0 + ROW_BLOCK, m)
        with np.errstate(over="ignore", invalid="ignore"):  # callers check finiteness
            np.matmul(a[r0:r1], b, out=out[r0:r1])

    if _workers == 1 or len(starts) == 1:
        for r0 in starts:
            block(r0)
    else:
        list(_executor().map(block, starts))
    return out


def _pad3(x, p):
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, p:p + h, p:p + w] = x
    return out


def im2col(x: np.ndarray, k: int, s: int, p: int) -> tuple[np.ndarray, int, int]:
    """Unroll one image (1, c, h, w) into a (c*k*k, oh*ow) patch matrix."""
    c = x.shape[1]
    if k == 1 and s == 1 and p == 0:
        return x[0].reshape(c, -1), x.shape[2], x.shape[3]
    win = sliding_window_view(_pad3(x[0], p) if p else x[0], (k, k), axis=(1, 2))
    win = win[:, ::s, ::s]  # c, oh, ow, k, k
    oh, ow = win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, oh * ow)
    return cols, oh, ow


def col2im(cols: np.ndarray, c: int, h: int, w: int, k: int, s: int, p: int,
           oh: int, ow: int) -> np.ndarray:
    if k == 1 and s == 1 and p == 0:
        return cols.reshape(1, c, h, w)
    dxp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, oh, ow)
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky:ky + s * (oh - 1) + 1:s, kx:kx + s * (ow - 1) + 1:s] += cols[:, ky, kx]
    return dxp[None, :, p:p + h, p:p + w]


def _per_image(fn, x, *rest):
    return np.concatenate([fn(x[i:i + 1], *rest) for i in range(x.shape[0])], axis=0)


def conv2d(x, w, b, stride, pad):
    if x.shape[0] != 1:
        return _per_image(conv2d, x, w, b, stride, pad)
    oc, _, k, _ = w.shape
    cols, oh, ow = im2col(x, k, stride, pad)
    out = gemm(w.reshape(oc, -1), cols)
    out += b[:, None]
    return out.reshape(1, oc, oh, ow)


def conv2d_grad_input(dy, w, stride, pad, h, wd):
    if dy.shape[0] != 1:
        return _per_image(conv2d_grad_input, dy, w, stride, pad, h, wd)
    oc, ic, k, _ = w.shape
    oh, ow = dy.shape[2], dy.shape[3]
    dcols = gemm(np.ascontiguousarray(w.reshape(oc, -1).T), dy[0].reshape(oc, -1))
    return col2im(dcols, ic, h, wd, k, stride, pad, oh, ow)


def conv2d_grad_weight(x, dy, k, stride, pad):
    oc = dy.shape[1]
    dw = None
    for i in range(x.shape[0]):
        cols, _, _ = im2col(x[i:i + 1], k, stride, pad)
        part = gemm(dy[i].reshape(oc, -1), np.ascontiguousarray(cols.T))
        dw = part if dw is None else dw + part
    return dw.reshape(oc, x.shape[1], k, k)


def relu(x):
    return np.maximum(x, 0)


def relu_grad(x, dy):
    return np.where(x > 0, dy, 0).astype(dy.dtype, copy=False)


def _windows(x, k, s):
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def avg_pool(x, k, s):
    if k == s and x.shape[2] % k == 0 and x.shape[3] % k == 0:
        n, c, h, w = x.shape
        return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5), dtype=x.dtype)
    return _windows(x, k, s).mean(axis=(4, 5), dtype=x.dtype)


def avg_pool_grad(dy, k, s, h, w):
    n, c, oh, ow = dy.shape
    g = dy / (k * k)
    if k == s and h == oh * k and w == ow * k:
        return np.broadcast_to(g[:, :, :, None, :, None], (n, c, oh, k, ow, k)).reshape(n, c, h, w).copy()
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    for ky in range(k):
        for kx in range(k):
            dx[:, :, ky:ky + s * (oh - 1) + 1:s, kx:kx + s * (ow - 1) + 1:s] += g
    return dx


def max_pool(x, k, s):
    return _windows(x, k, s).max(axis=(4, 5))


def max_pool_grad(x, dy, k, s):
    n, c, oh, ow = dy.shape
    win = _windows(x, k, s).reshape(n, c, oh, ow, k * k)
    arg = win.argmax(axis=4)
    dx = np.zeros_like(x)
    nn, cc, yy, xx = np.indices((n, c, oh, ow))
    np.add.at(dx, (nn, cc, yy * s + arg // k, xx * s + arg % k), dy)
    return dx
