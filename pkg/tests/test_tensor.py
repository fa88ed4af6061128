import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harunet import tensor as T
from harunet.errors import DimensionError, UsageError
from harunet.tensor import Tensor, finite_diff_check

from oracles import bilinear_half_pixel, conv2d_direct


def leaf(shape, seed=0, scale=1.0):
    return Tensor(np.random.default_rng(seed).normal(scale=scale, size=shape), requires_grad=True)


def weighted(out: Tensor, seed=99) -> Tensor:
    """Scalar with a generic upstream gradient: sum(out * r) for fixed random r."""
    r = np.random.default_rng(seed).normal(size=out.shape)
    return T.tsum(out * r)


# ---------------------------------------------------------------- engine


def test_backward_trivial_grads():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.backward(T.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    y = Tensor([3.0], requires_grad=True)
    T.backward(T.tsum(y * y))
    assert y.grad[0] == 6.0


def test_backward_accumulates():
    x = Tensor([1.0, -2.0], requires_grad=True)
    loss = T.tsum(x * x)
    T.backward(loss)
    T.backward(loss)
    np.testing.assert_array_equal(x.grad, [4.0, -8.0])
    x.zero_grad()
    assert not x.grad.any()


def test_grad_is_zero_at_creation():
    assert not Tensor(np.ones(3), requires_grad=True).grad.any()


def test_backward_requires_scalar():
    with pytest.raises(UsageError):
        T.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_shared_subexpression_and_no_grad():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    T.backward(T.tsum(y + y * 3.0))  # d/dx 4x² = 8x
    assert x.grad[0] == 16.0
    with T.no_grad():
        z = x * x
    assert not z.requires_grad


def test_no_grad_is_thread_local():
    seen = []

    def worker():
        seen.append(T.grad_enabled())

    with T.no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
        assert not T.grad_enabled()
    assert seen == [True] and T.grad_enabled()


# ---------------------------------------------------------------- conv2d


def test_conv_identity_kernel():
    x = Tensor(np.ones((1, 1, 2, 2)))
    out = T.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_counts_overlap():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), pad=1)
    np.testing.assert_array_equal(out.data[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


@pytest.mark.parametrize("stride,pad,dilation", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 0, 2), (3, 2, 1)])
def test_conv_matches_direct_loops_and_fd(stride, pad, dilation):
    x, w, b = leaf((2, 3, 7, 6), 1), leaf((4, 3, 3, 3), 2), leaf((4,), 3)
    out = T.conv2d(x, w, b, stride, pad, dilation)
    np.testing.assert_allclose(out.data, conv2d_direct(x.data, w.data, b.data, stride, pad, dilation), atol=1e-12)
    for target in (x, w, b):
        err = finite_diff_check(lambda t: weighted(T.conv2d(x, w, b, stride, pad, dilation)), target)
        assert err < 1e-6


def test_conv_errors_and_linearity():
    x = leaf((1, 2, 5, 5))
    with pytest.raises(DimensionError, match="axis 1"):
        T.conv2d(x, Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(DimensionError):
        T.conv2d(x, Tensor(np.ones((1, 2, 7, 7))))
    w = leaf((3, 2, 3, 3), 5)
    a = T.conv2d(Tensor(2.5 * x.data), w, pad=1).data
    np.testing.assert_allclose(a, 2.5 * T.conv2d(x, w, pad=1).data, rtol=1e-13)


# ---------------------------------------------------------------- pooling and resizing


def test_maxpool_examples():
    out = T.maxpool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
    assert out.data.reshape(-1).tolist() == [4.0]
    x = Tensor(np.full((1, 1, 4, 4), 7.0), requires_grad=True)
    T.backward(T.tsum(T.maxpool2d(x)))
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0  # first position of every window
    np.testing.assert_array_equal(x.grad[0, 0], expected)
    with pytest.raises(DimensionError):
        T.maxpool2d(Tensor(np.ones((1, 1, 1, 3))))


def test_maxpool_ceil_mode_odd_sizes():
    x = Tensor(np.arange(25.0).reshape(1, 1, 5, 5))
    out = T.maxpool2d(x)
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_array_equal(out.data[0, 0], [[6, 8, 9], [16, 18, 19], [21, 23, 24]])
    assert [T.pool_output_size(s) for s in (2, 3, 4, 5, 7)] == [1, 2, 2, 3, 4]


def test_maxpool_fd():
    # a permutation of distinct values keeps every window free of ties
    rng = np.random.default_rng(0)
    x = Tensor(rng.permutation(2 * 3 * 7 * 6).reshape(2, 3, 7, 6) * 0.1, requires_grad=True)
    assert finite_diff_check(lambda t: weighted(T.maxpool2d(t)), x, eps=1e-4) < 1e-6


def test_upsample_examples():
    out = T.upsample_bilinear(Tensor(np.full((1, 1, 1, 1), 5.0)), 3, 7)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 7), 5.0))
    x = Tensor(np.random.default_rng(1).random((1, 2, 2, 2)))
    np.testing.assert_array_equal(T.upsample_bilinear(x, 2, 2).data, x.data)
    img = np.array([[0.0, 1.0], [0.0, 1.0]])
    out = T.upsample_bilinear(Tensor(img[None, None]), 4, 4).data[0, 0]
    np.testing.assert_allclose(out, bilinear_half_pixel(img, 4, 4), atol=1e-15)
    np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0])


@pytest.mark.parametrize("size", [(3, 5, 7, 2), (4, 4, 1, 9), (6, 2, 3, 3)])
def test_upsample_oracle_and_fd(size):
    h, w, oh, ow = size
    x = leaf((1, 2, h, w), 3)
    out = T.upsample_bilinear(x, oh, ow)
    for c in range(2):
        np.testing.assert_allclose(out.data[0, c], bilinear_half_pixel(x.data[0, c], oh, ow), atol=1e-13)
    assert finite_diff_check(lambda t: weighted(T.upsample_bilinear(t, oh, ow)), x) < 1e-6


# ---------------------------------------------------------------- elementwise and reductions


def test_sigmoid_and_broadcast_examples():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
    x = Tensor([0.0], requires_grad=True)
    T.backward(T.tsum(T.sigmoid(x)))
    assert x.grad[0] == 0.25
    assert finite_diff_check(lambda t: T.tsum(T.sigmoid(t)), x) < 1e-8
    big = T.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0
    f = leaf((2, 3, 4, 5))
    np.testing.assert_array_equal(T.mul_broadcast(f, Tensor(np.ones((2, 3, 1, 1)))).data, f.data)
    with pytest.raises(DimensionError):
        T.mul_broadcast(f, Tensor(np.ones((2, 2, 1, 1))))


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "relu", "sigmoid", "log", "power", "clip"])
def test_elementwise_fd(op):
    a = leaf((2, 3, 4, 4), 1)
    b = Tensor(np.random.default_rng(2).uniform(0.5, 2.0, size=(2, 3, 4, 4)), requires_grad=True)
    if op == "relu":
        a.data[np.abs(a.data) < 1e-3] = 0.5  # stay away from the kink
    fns = {
        "add": lambda t: T.add(t, b), "sub": lambda t: T.sub(b, t), "mul": lambda t: T.mul(t, b),
        "div": lambda t: T.div(t, b), "relu": T.relu, "sigmoid": T.sigmoid,
        "log": lambda t: T.log(T.add(T.mul(t, t), 1.0)), "power": lambda t: T.power(t, 3.0),
        "clip": lambda t: T.clip(t, -0.5, 0.7),
    }
    if op == "clip":
        a.data[np.abs(np.abs(a.data - 0.1) - 0.6) < 1e-3] = 0.0
    assert finite_diff_check(lambda t: weighted(fns[op](t)), a) < 1e-6
    binary = {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}
    if op in binary:
        assert finite_diff_check(lambda t: weighted(binary[op](a, t)), b) < 1e-6


def test_mul_broadcast_fd():
    x = leaf((2, 3, 4, 5), 1)
    for shape in ((2, 3, 1, 1), (2, 1, 4, 5)):
        s = leaf(shape, 2)
        assert finite_diff_check(lambda t: weighted(T.mul_broadcast(x, t)), s) < 1e-6
        assert finite_diff_check(lambda t: weighted(T.mul_broadcast(t, s)), x) < 1e-6


def test_pool_examples():
    const = Tensor(np.full((1, 2, 3, 3), 3.0))
    for mode in ("avg", "max"):
        np.testing.assert_array_equal(T.global_pool(const, mode).data, np.full((1, 2, 1, 1), 3.0))
    q = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert T.global_pool(q, "avg").item() == 2.5 and T.global_pool(q, "max").item() == 4.0
    x = Tensor(np.ones((1, 1, 4, 2)), requires_grad=True)
    T.backward(T.tsum(T.global_pool(x, "avg")))
    np.testing.assert_array_equal(x.grad, np.full((1, 1, 4, 2), 1 / 8))
    one = leaf((2, 1, 3, 3))
    for mode in ("avg", "max"):
        np.testing.assert_array_equal(T.reduce_over_channels(one, mode).data, one.data)
    two = Tensor(np.stack([np.ones((2, 2)), 3 * np.ones((2, 2))])[None])
    assert (T.reduce_over_channels(two, "avg").data == 2).all()
    assert (T.reduce_over_channels(two, "max").data == 3).all()


@pytest.mark.parametrize("fn", [
    lambda t: T.global_pool(t, "avg"), lambda t: T.global_pool(t, "max"),
    lambda t: T.reduce_over_channels(t, "avg"), lambda t: T.reduce_over_channels(t, "max"),
    lambda t: T.reshape(t, (4, -1)), lambda t: T.mean(t, axis=(1, 3)),
])
def test_reduction_fd(fn):
    assert finite_diff_check(lambda t: weighted(fn(t)), leaf((2, 3, 4, 5), 7)) < 1e-6


def test_concat_and_slice():
    a, b = leaf((2, 1, 3, 3), 1), leaf((2, 2, 3, 3), 2)
    assert T.concat_channels([a]).data is not None
    np.testing.assert_array_equal(T.concat_channels([a]).data, a.data)
    cat = T.concat_channels([a, b])
    assert cat.shape == (2, 3, 3, 3)
    np.testing.assert_array_equal(T.slice_channels(cat, 0, 1).data, a.data)
    np.testing.assert_array_equal(T.slice_channels(cat, 1, 3).data, b.data)
    assert finite_diff_check(lambda t: weighted(T.concat_channels([t, b])), a) < 1e-8
    assert finite_diff_check(lambda t: weighted(T.slice_channels(t, 1, 3)), b) < 1e-8
    with pytest.raises(DimensionError):
        T.concat_channels([a, leaf((2, 1, 4, 3))])


def test_linear():
    x = leaf((3, 4), 1)
    np.testing.assert_array_equal(T.linear(x, Tensor(np.eye(4))).data, x.data)
    b = Tensor(np.arange(2.0))
    np.testing.assert_array_equal(T.linear(x, Tensor(np.zeros((2, 4))), b).data, np.tile(b.data, (3, 1)))
    w, bb = leaf((2, 4), 2), leaf((2,), 3)
    for target in (x, w, bb):
        assert finite_diff_check(lambda t: weighted(T.linear(x, w, bb)), target) < 1e-6


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_fd(training):
    x, g, b = leaf((3, 2, 4, 4), 1), leaf((2,), 2), leaf((2,), 3)
    rm, rv = np.zeros(2), np.ones(2) * 1.5

    def f(_):
        return weighted(T.batch_norm(x, g, b, rm.copy(), rv.copy(), training))

    for target in (x, g, b):
        assert finite_diff_check(f, target) < 1e-6


def test_batch_norm_running_stats():
    x = Tensor(np.random.default_rng(0).normal(2.0, 3.0, size=(4, 2, 5, 5)))
    rm, rv = np.zeros(2), np.ones(2)
    out = T.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=True)
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(rm, 0.1 * x.data.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.data.var(axis=(0, 2, 3), ddof=1))


def test_finite_diff_check_needs_grad():
    with pytest.raises(UsageError):
        finite_diff_check(T.tsum, Tensor(np.ones(3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(3, 8), st.integers(3, 8), st.integers(0, 1000))
def test_forward_is_pure(n, c, h, w, seed):
    x = np.random.default_rng(seed).normal(size=(n, c, h, w))
    k = np.random.default_rng(seed + 1).normal(size=(2, c, 3, 3))
    first = T.conv2d(Tensor(x), Tensor(k), pad=1).data
    second = T.conv2d(Tensor(x.copy()), Tensor(k.copy()), pad=1).data
    assert np.array_equal(first, second)
    up = T.upsample_bilinear(Tensor(x), 2 * h, w + 1).data
    assert np.array_equal(up, T.upsample_bilinear(Tensor(x), 2 * h, w + 1).data)
