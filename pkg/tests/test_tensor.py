import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leancnn.tensor import (
    ConvGeometry,
    ShapeError,
    as_tensor,
    conv2d_forward,
    dense_forward,
    maxpool2d_forward,
    relu,
    softmax,
)
from oracles import naive_conv2d, naive_maxpool


class TestConv2d:
    def test_table_shape(self):
        x = np.zeros((224, 224, 3), np.float32)
        w = np.zeros((3, 3, 3, 32), np.float32)
        out = conv2d_forward(x, w, np.zeros(32, np.float32), padding="same")
        assert out.shape == (224, 224, 32)

    def test_identity_kernel(self):
        x = np.random.default_rng(0).random((5, 7, 1)).astype(np.float32)
        out = conv2d_forward(x, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
        assert np.array_equal(out, x)

    def test_all_ones_valid(self):
        out = conv2d_forward(np.ones((3, 3, 1)), np.ones((3, 3, 1, 1)), np.zeros(1), padding="valid")
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9.0

    def test_channel_mismatch_names_dim(self):
        with pytest.raises(ShapeError) as info:
            conv2d_forward(np.zeros((4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))
        assert info.value.dim == "C_in"

    def test_bias_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((4, 4, 3)), np.zeros((3, 3, 3, 2)), np.zeros(3))

    def test_zero_size_output(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((2, 2, 1)), np.zeros((3, 3, 1, 1)), np.zeros(1), padding="valid")

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 6, 6, 3))
        w = rng.normal(size=(3, 3, 3, 4))
        b = rng.normal(size=4)
        batched = conv2d_forward(x, w, b)
        for i in range(2):
            assert np.array_equal(batched[i], conv2d_forward(x[i], w, b))

    @pytest.mark.parametrize("seed", range(12))
    def test_bitwise_equal_to_naive_loops(self, seed):
        rng = np.random.default_rng(seed)
        h, w_, c_in = rng.integers(3, 9), rng.integers(3, 9), rng.integers(1, 4)
        k = int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        padding = str(rng.choice(["same", "valid"]))
        x = rng.normal(size=(h, w_, c_in))
        w = rng.normal(size=(k, k, c_in, 2))
        b = rng.normal(size=2)
        got = conv2d_forward(x, w, b, stride, padding)
        ref = naive_conv2d(x, w, b, stride, padding)
        assert got.dtype == np.float64
        assert np.array_equal(got, ref)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(6, 6, 2)).astype(np.float32)
        y = rng.normal(size=(6, 6, 2)).astype(np.float32)
        w = rng.normal(size=(3, 3, 2, 3)).astype(np.float32)
        zero = np.zeros(3, np.float32)
        a32, b32 = np.float32(a), np.float32(b)
        lhs = conv2d_forward(a32 * x + b32 * y, w, zero)
        rhs = a32 * conv2d_forward(x, w, zero) + b32 * conv2d_forward(y, w, zero)
        scale = np.abs(lhs).max() + np.abs(rhs).max() + 1e-6
        assert np.max(np.abs(lhs - rhs)) / scale < 1e-4


class TestConvGeometry:
    def test_same_preserves(self):
        assert ConvGeometry(224, 224, 3, 32, 3).output_hw() == (224, 224)

    def test_valid_floor(self):
        assert ConvGeometry(7, 8, 1, 1, 3, stride=2, padding="valid").output_hw() == (3, 3)

    def test_valid_too_small(self):
        with pytest.raises(ShapeError):
            ConvGeometry(2, 2, 1, 1, 3, padding="valid")


class TestMaxPool:
    def test_table_shape(self):
        out, _ = maxpool2d_forward(np.zeros((224, 224, 32), np.float32))
        assert out.shape == (112, 112, 32)

    def test_constant(self):
        out, _ = maxpool2d_forward(np.full((6, 6, 2), 3.5))
        assert np.all(out == 3.5)

    def test_argmax_position(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[..., None]
        out, arg = maxpool2d_forward(x)
        assert out.shape == (1, 1, 1) and out[0, 0, 0] == 4.0
        assert divmod(int(arg[0, 0, 0]), 2) == (1, 1)

    def test_floor_semantics(self):
        out, _ = maxpool2d_forward(np.zeros((7, 5, 1)))
        assert out.shape == (3, 2, 1)

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            maxpool2d_forward(np.zeros((1, 4, 1)))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive(self, seed):
        x = np.random.default_rng(seed).normal(size=(9, 8, 3))
        out, _ = maxpool2d_forward(x)
        assert np.array_equal(out, naive_maxpool(x))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 100))
    def test_positive_scaling(self, seed, lam):
        x = np.random.default_rng(seed).normal(size=(6, 6, 2))
        out, _ = maxpool2d_forward(x)
        scaled, _ = maxpool2d_forward(lam * x)
        assert np.allclose(scaled, lam * out, rtol=1e-12)


class TestDense:
    def test_table_shape(self):
        out = dense_forward(np.zeros(100352, np.float32), np.zeros((100352, 256), np.float32), np.zeros(256, np.float32))
        assert out.shape == (256,)

    def test_identity(self):
        x = np.array([3.0, -1.0, 2.0])
        assert np.array_equal(dense_forward(x, np.eye(3), np.zeros(3)), x)

    def test_hand_example(self):
        out = dense_forward(np.array([1.0, 2.0]), np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([10.0, 10.0]))
        assert np.array_equal(out, [11.0, 12.0])

    def test_mismatch(self):
        with pytest.raises(ShapeError) as info:
            dense_forward(np.zeros(3), np.zeros((4, 2)), np.zeros(2))
        assert info.value.dim == "n_in"


class TestActivations:
    def test_relu(self):
        assert np.all(relu(-np.arange(1, 5.0)) == 0)
        assert np.array_equal(relu(np.arange(1, 5.0)), np.arange(1, 5.0))
        assert np.array_equal(relu(np.array([-1.0, 0.0, 2.5])), [0.0, 0.0, 2.5])

    def test_softmax_uniform(self):
        assert np.allclose(softmax(np.full(7, 0.3)), 1 / 7, atol=1e-15)

    def test_softmax_ln3(self):
        assert np.allclose(softmax(np.array([0.0, math.log(3)])), [0.25, 0.75], atol=1e-15)

    def test_softmax_rejects_nonfinite(self):
        with pytest.raises(FloatingPointError):
            softmax(np.array([0.0, np.inf]))

    def test_softmax_needs_two(self):
        with pytest.raises(ShapeError):
            softmax(np.array([1.0]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.floats(-100, 100))
    def test_shift_invariance(self, z, c):
        z = np.array(z)
        assert np.allclose(softmax(z + c), softmax(z), atol=1e-12)

    def test_normalization_10k(self):
        rng = np.random.default_rng(0)
        z = rng.normal(scale=5, size=(10_000, 7)).astype(np.float32)
        p = softmax(z)
        assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-6)
        assert np.all((p > 0) & (p < 1))


def test_as_tensor_invariants():
    t = as_tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32 and t.shape == (2, 2)
    assert as_tensor(5.0).shape == (1,)
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((0, 3)))
