"""Direct-loop kernels compiled with numba.

Every kernel is a plain nested loop over the mathematical definition with a
float64 accumulator, single threaded, so the accumulation order is fixed.
"""

import numba
import numpy as np

_jit = numba.njit(cache=True, nogil=True)


@_jit
def conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    oc, ic, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.empty((n, oc, oh, ow), dtype=x.dtype)
    acc = np.empty((oh, ow), dtype=np.float64)
    for bn in range(n):
        for o in range(oc):
            acc[:, :] = 0.0
            for i in range(ic):
                for ky in range(k):
                    for kx in range(k):
                        wv = np.float64(w[o, i, ky, kx])
                        for y in range(oh):
                            iy = y * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for xx in range(ow):
                                ix = xx * stride + kx - pad
                                if ix < 0 or ix >= wd:
                                    continue
                                acc[y, xx] += wv * x[bn, i, iy, ix]
            for y in range(oh):
                for xx in range(ow):
                    out[bn, o, y, xx] = acc[y, xx] + b[o]
    return out


@_jit
def conv2d_grad_input(dy, w, stride, pad, h, wd):
    n, oc, oh, ow = dy.shape
    _, ic, k, _ = w.shape
    dx = np.empty((n, ic, h, wd), dtype=dy.dtype)
    acc = np.empty((h, wd), dtype=np.float64)
    for bn in range(n):
        for i in range(ic):
            acc[:, :] = 0.0
            for o in range(oc):
                for ky in range(k):
                    for kx in range(k):
                        wv = np.float64(w[o, i, ky, kx])
                        for y in range(oh):
                            iy = y * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for xx in range(ow):
                                ix = xx * stride + kx - pad
                                if ix < 0 or ix >= wd:
                                    continue
                                acc[iy, ix] += wv * dy[bn, o, y, xx]
            for y in range(h):
                for xx in range(wd):
                    dx[bn, i, y, xx] = acc[y, xx]
    return dx


@_jit
def conv2d_grad_weight(x, dy, k, stride, pad):
    n, c, h, wd = x.shape
    _, oc, oh, ow = dy.shape
    dw = np.empty((oc, c, k, k), dtype=dy.dtype)
    for o in range(oc):
        for i in range(c):
            for ky in range(k):
                for kx in range(k):
                    acc = 0.0
                    for bn in range(n):
                        for y in range(oh):
                            iy = y * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for xx in range(ow):
                                ix = xx * stride + kx - pad
                                if ix < 0 or ix >= wd:
                                    continue
                                acc += np.float64(x[bn, i, iy, ix]) * dy[bn, o, y, xx]
                    dw[o, i, ky, kx] = acc
    return dw


@_jit
def gemm(a, b):
    m, kk = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=a.dtype)
    row = np.empty(n, dtype=np.float64)
    for i in range(m):
        row[:] = 0.0
        for p in range(kk):
            av = np.float64(a[i, p])
            for j in range(n):
                row[j] += av * b[p, j]
        for j in range(n):
            out[i, j] = row[j]
    return out


@_jit
def relu(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        out[i] = v if v > 0 else 0.0
    return out.reshape(x.shape)


@_jit
def relu_grad(x, dy):
    fx = x.ravel()
    fd = dy.ravel()
    out = np.empty_like(fd)
    for i in range(fx.size):
        out[i] = fd[i] if fx[i] > 0 else 0.0
    return out.reshape(dy.shape)


@_jit
def avg_pool(x, k, s):
    n, c, h, w = x.shape
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    inv = 1.0 / (k * k)
    for bn in range(n):
        for ch in range(c):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for ky in range(k):
                        for kx in range(k):
                            acc += x[bn, ch, y * s + ky, xx * s + kx]
                    out[bn, ch, y, xx] = acc * inv
    return out


@_jit
def avg_pool_grad(dy, k, s, h, w):
    n, c, oh, ow = dy.shape
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    inv = 1.0 / (k * k)
    for bn in range(n):
        for ch in range(c):
            for y in range(oh):
                for xx in range(ow):
                    g = dy[bn, ch, y, xx] * inv
                    for ky in range(k):
                        for kx in range(k):
                            dx[bn, ch, y * s + ky, xx * s + kx] += g
    return dx


@_jit
def max_pool(x, k, s):
    n, c, h, w = x.shape
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for bn in range(n):
        for ch in range(c):
            for y in range(oh):
                for xx in range(ow):
                    best = x[bn, ch, y * s, xx * s]
                    for ky in range(k):
                        for kx in range(k):
                            v = x[bn, ch, y * s + ky, xx * s + kx]
                            if v > best:
                                best = v
                    out[bn, ch, y, xx] = best
    return out


@_jit
def max_pool_grad(x, dy, k, s):
    # ties route the gradient to the first maximum in row-major window order
    n, c, h, w = x.shape
    _, _, oh, ow = dy.shape
    dx = np.zeros_like(x)
    for bn in range(n):
        for ch in range(c):
            for y in range(oh):
                for xx in range(ow):
                    by = y * s
                    bx = xx * s
                    best = x[bn, ch, by, bx]
                    for ky in range(k):
                        for kx in range(k):
                            v = x[bn, ch, y * s + ky, xx * s + kx]
                            if v > best:
                                best = v
                                by = y * s + ky
                                bx = xx * s + kx
                    dx[bn, ch, by, bx] += dy[bn, ch, y, xx]
    return dx
