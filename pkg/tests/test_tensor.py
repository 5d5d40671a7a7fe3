import numpy as np
import pytest

from nstbench import ConvParams, GeometryError, ShapeError, SizeError, Tensor, float64_mode, tensor_new
from nstbench.tensor import add_allocation_hook, default_dtype, remove_allocation_hook, window_out_size


def test_zero_fill():
    t = tensor_new((1, 3, 2, 2), 0.0)
    assert t.shape == (1, 3, 2, 2)
    assert t.size == 12
    assert (t.data == 0).all()


def test_single_element():
    t = tensor_new((1, 1, 1, 1), 7.5)
    assert t.data.item() == 7.5


def test_from_data_length_mismatch():
    with pytest.raises(ShapeError):
        Tensor.from_data((1, 3, 2, 2), range(11))


def test_from_data_row_major():
    t = Tensor.from_data((1, 1, 2, 3), range(6))
    assert t.data[0, 0, 1, 0] == 3


def test_negative_dim_and_overflow():
    with pytest.raises(SizeError):
        tensor_new((1, -1, 2, 2))
    with pytest.raises(SizeError):
        Tensor.full((2**20, 2**20, 2**20, 2**20), 0.0)


def test_must_be_4d():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2)))


def test_immutable():
    t = tensor_new((1, 1, 2, 2), 1.0)
    with pytest.raises(ValueError):
        t.data[0, 0, 0, 0] = 3.0


def test_precision_modes():
    assert tensor_new((1, 1, 1, 1)).dtype == np.float32
    with float64_mode():
        assert default_dtype() == np.float64
        assert tensor_new((1, 1, 1, 1)).dtype == np.float64
    assert default_dtype() == np.float32


def test_allocation_hook():
    seen = []
    add_allocation_hook(seen.append)
    try:
        tensor_new((1, 2, 3, 4))
    finally:
        remove_allocation_hook(seen.append)
    assert seen == [(1, 2, 3, 4)]


def test_conv_params_geometry():
    p = ConvParams(3, 8, 3, 1, 1)
    assert p.out_size(16) == 16
    assert ConvParams(3, 8, 3, 2, 1).out_size(15) == 8
    with pytest.raises(GeometryError):
        ConvParams(3, 8, 0)
    with pytest.raises(GeometryError):
        ConvParams(3, 8, 3, stride=0)
    with pytest.raises(GeometryError):
        ConvParams(3, 8, 3, 2, 0).out_size(16)  # 13/2 not integral
    with pytest.raises(GeometryError):
        window_out_size(2, 3, 1)
