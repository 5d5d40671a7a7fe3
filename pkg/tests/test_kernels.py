import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nstbench import Backend, ConvParams, GeometryError, NumericError, ShapeError, Tensor
from nstbench import kernels
from nstbench.kernels import avg_pool_exec, conv2d_exec, gemm, max_pool_exec, relu_exec

from conftest import max_rel_diff

BACKENDS = ["naive", "fast"]


def sliding_window_oracle(x, w, b, stride=1, pad=0):
    """Direct definition, pure Python: sum of overlapped products per output cell."""
    n, c, h, wd = x.shape
    oc, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for bn in range(n):
        for o in range(oc):
            for y in range(oh):
                for xx in range(ow):
                    s = float(b[o])
                    for i in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                s += w[o, i, ky, kx] * xp[bn, i, y * stride + ky, xx * stride + kx]
                    out[bn, o, y, xx] = s
    return out


def triple_loop(a, b):
    m, kk = len(a), len(b)
    n = len(b[0])
    return [[sum(a[i][p] * b[p][j] for p in range(kk)) for j in range(n)] for i in range(m)]


def _t(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


def test_oracle_matches_frozen_example():
    x = np.arange(1, 10, dtype=float).reshape(1, 1, 3, 3)
    w = np.array([[[[1, 0], [0, 1]]]], dtype=float)
    assert sliding_window_oracle(x, w, [0.0]).tolist() == [[[[6, 8], [12, 14]]]]


@pytest.mark.parametrize("backend", BACKENDS)
def test_conv_worked_example(backend):
    x = Tensor.from_data((1, 1, 3, 3), range(1, 10))
    w = Tensor.from_data((1, 1, 2, 2), [1, 0, 0, 1])
    b = Tensor.zeros((1, 1, 1, 1))
    out = conv2d_exec(x, w, b, ConvParams(1, 1, 2), backend)
    assert out.shape == (1, 1, 2, 2)
    assert out.data.tolist() == [[[[6, 8], [12, 14]]]]


@pytest.mark.parametrize("backend", BACKENDS)
def test_identity_kernel(backend, rng):
    x = _t(rng.standard_normal((1, 1, 7, 5)))
    out = conv2d_exec(x, Tensor.full((1, 1, 1, 1), 1.0), Tensor.zeros((1, 1, 1, 1)), ConvParams(1, 1, 1), backend)
    assert out == x


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1), (1, 2)])
def test_conv_matches_direct_oracle(backend, stride, pad, rng):
    x = rng.standard_normal((1, 3, 7, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    p = ConvParams(3, 4, 3, stride, pad)
    out = conv2d_exec(_t(x), _t(w), _t(b.reshape(1, 1, 1, 4)), p, backend)
    assert max_rel_diff(out.data, sliding_window_oracle(x, w, b, stride, pad)) < 1e-5


def test_backends_agree_random_16(rng):
    x = _t(rng.standard_normal((1, 4, 16, 16)))
    w = _t(rng.standard_normal((8, 4, 3, 3)))
    b = _t(rng.standard_normal((1, 1, 1, 8)))
    p = ConvParams(4, 8, 3, 1, 1)
    a = conv2d_exec(x, w, b, p, "naive").data
    f = conv2d_exec(x, w, b, p, "fast").data
    assert max_rel_diff(a, f) < 1e-5


@settings(max_examples=25, deadline=None)
@given(c=st.integers(1, 32), oc=st.integers(1, 32), h=st.integers(5, 32), w=st.integers(5, 32),
       k=st.sampled_from([1, 3, 5]), seed=st.integers(0, 2**31))
def test_backend_equivalence_property(c, oc, h, w, k, seed):
    rng = np.random.default_rng(seed)
    p = ConvParams(c, oc, k, 1, k // 2)
    x, wt = _t(rng.standard_normal((1, c, h, w))), _t(rng.standard_normal((oc, c, k, k)))
    b = _t(rng.standard_normal((1, 1, 1, oc)))
    naive = conv2d_exec(x, wt, b, p, "naive")
    fast = conv2d_exec(x, wt, b, p, "fast")
    assert naive.shape == fast.shape == (1, oc, h, w)
    assert max_rel_diff(naive.data, fast.data) < 1e-5


def test_conv_errors():
    x = Tensor.zeros((1, 2, 4, 4))
    with pytest.raises(ShapeError):
        conv2d_exec(x, Tensor.zeros((1, 3, 3, 3)), Tensor.zeros((1, 1, 1, 1)), ConvParams(3, 1, 3))
    with pytest.raises(ShapeError):
        conv2d_exec(x, Tensor.zeros((1, 2, 2, 2)), Tensor.zeros((1, 1, 1, 1)), ConvParams(2, 1, 3))
    with pytest.raises(GeometryError):
        conv2d_exec(x, Tensor.zeros((1, 2, 3, 3)), Tensor.zeros((1, 1, 1, 1)), ConvParams(2, 1, 3, 2))


def test_conv_non_finite_detected():
    x = Tensor.full((1, 1, 2, 2), 3e38)
    w = Tensor.full((1, 1, 2, 2), 3e38)
    with pytest.raises(NumericError):
        conv2d_exec(x, w, Tensor.zeros((1, 1, 1, 1)), ConvParams(1, 1, 2))


@pytest.mark.parametrize("backend", BACKENDS)
def test_gemm_examples(backend, rng):
    a, b = [[1, 2], [3, 4]], [[5, 6], [7, 8]]
    assert triple_loop(a, b) == [[19, 22], [43, 50]]
    assert np.array_equal(gemm(np.array(a, float), np.array(b, float), backend), [[19, 22], [43, 50]])
    m = rng.standard_normal((3, 5))
    assert np.array_equal(gemm(np.eye(3), m, backend), m)
    with pytest.raises(ShapeError):
        gemm(np.zeros((2, 3)), np.zeros((2, 3)), backend)


@settings(max_examples=20, deadline=None)
@given(m=st.integers(1, 150), k=st.integers(1, 40), n=st.integers(1, 40), seed=st.integers(0, 2**31))
def test_gemm_backends_agree_with_triple_loop(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, k)).astype(np.float32)
    b = rng.standard_normal((k, n)).astype(np.float32)
    ref = np.array(triple_loop(a.astype(float).tolist(), b.astype(float).tolist()))
    for backend in BACKENDS:
        assert max_rel_diff(gemm(a, b, backend), ref) < 1e-5


def test_gemm_deterministic_across_worker_counts(rng, restore_workers):
    a = rng.standard_normal((300, 70)).astype(np.float32)
    b = rng.standard_normal((70, 50)).astype(np.float32)
    outs = []
    for n in (1, 2, 3, 4):
        kernels.set_workers(n)
        outs.append(gemm(a, b, "fast"))
    assert all(np.array_equal(outs[0], o) for o in outs[1:])


def test_conv_deterministic_across_worker_counts(rng, restore_workers):
    x = _t(rng.standard_normal((1, 8, 20, 20)))
    w = _t(rng.standard_normal((130, 8, 3, 3)))
    b = Tensor.zeros((1, 1, 1, 130))
    p = ConvParams(8, 130, 3, 1, 1)
    ref = None
    for n in (1, 2, 4):
        kernels.set_workers(n)
        for backend in BACKENDS:
            out = conv2d_exec(x, w, b, p, backend)
            if backend == "fast":
                ref = out if ref is None else ref
                assert out == ref
            else:
                assert out == conv2d_exec(x, w, b, p, backend)


@pytest.mark.parametrize("backend", BACKENDS)
def test_relu(backend):
    out = relu_exec(Tensor.from_data((1, 1, 1, 3), [-1, 0, 2.5]), backend)
    assert out.data.ravel().tolist() == [0, 0, 2.5]


@pytest.mark.parametrize("backend", BACKENDS)
def test_avg_pool(backend):
    out = avg_pool_exec(Tensor.from_data((1, 1, 2, 2), [1, 3, 5, 7]), 2, 2, backend)
    assert out.data.tolist() == [[[[4.0]]]]
    const = avg_pool_exec(Tensor.full((1, 3, 8, 6), 2.5), 2, 2, backend)
    assert const.shape == (1, 3, 4, 3)
    assert (const.data == 2.5).all()
    overlapping = avg_pool_exec(Tensor.full((1, 1, 5, 5), -1.0), 3, 1, backend)
    assert overlapping.shape == (1, 1, 3, 3) and (overlapping.data == -1).all()
    with pytest.raises(GeometryError):
        avg_pool_exec(Tensor.zeros((1, 1, 5, 5)), 2, 2, backend)


def test_pool_backends_agree(rng):
    x = _t(rng.standard_normal((1, 3, 9, 9)))
    for k, s in [(2, 1), (3, 3), (3, 2)]:
        assert max_rel_diff(avg_pool_exec(x, k, s, "naive").data, avg_pool_exec(x, k, s, "fast").data) < 1e-6
        assert max_pool_exec(x, k, s, "naive") == max_pool_exec(x, k, s, "fast")


@pytest.mark.parametrize("backend", BACKENDS)
def test_backward_kernels_agree(backend, rng):
    x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
    dy = rng.standard_normal((1, 5, 8, 8)).astype(np.float32)
    p = ConvParams(3, 5, 3, 1, 1)
    got = kernels.conv2d_backward(dy, x, w, p, backend, need_weight=True)
    ref = kernels.conv2d_backward(dy, x, w, p, "naive" if backend == "fast" else "fast", need_weight=True)
    for g, r in zip(got, ref):
        assert max_rel_diff(g, r) < 1e-5


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 64), k=st.integers(1, 5), s=st.integers(1, 3), p=st.integers(0, 2),
       c=st.integers(1, 4), seed=st.integers(0, 100))
def test_shape_algebra(h, k, s, p, c, seed):
    params = ConvParams(c, 2, k, s, p)
    try:
        predicted = kernels.conv_output_shape((1, c, h, h), params)
    except GeometryError:
        return
    x = Tensor(np.random.default_rng(seed).standard_normal((1, c, h, h)))
    out = conv2d_exec(x, Tensor.zeros(params.weight_shape), Tensor.zeros((1, 1, 1, 2)), params, "fast")
    assert out.shape == predicted
    try:
        pooled = kernels.pool_output_shape(out.shape, 2, 2)
    except GeometryError:
        return
    assert avg_pool_exec(out, 2, 2, "fast").shape == pooled
