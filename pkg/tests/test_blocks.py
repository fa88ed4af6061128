import numpy as np
import pytest

from harunet import tensor as T
from harunet.attention import CBAM, ChannelAttention, ChannelGate, SpatialAttention
from harunet.blocks import RSU, CFBlock, ConcatFusion
from harunet.errors import ConfigurationError
from harunet.layers import Conv2d, Linear
from harunet.tensor import Tensor, finite_diff_check


def feature(shape, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=shape), requires_grad=True)


def weighted(out, seed=99):
    return T.tsum(out * np.random.default_rng(seed).normal(size=out.shape))


def zero_params(module):
    for p in module.parameters():
        p.data[...] = 0.0


# ---------------------------------------------------------------- attention


def test_channel_attention_zero_weights_and_range():
    ca = ChannelAttention(8, reduction=4, rng=np.random.default_rng(1))
    x = feature((2, 8, 5, 5))
    w = ca(x).data
    assert w.shape == (2, 8, 1, 1) and np.all((w > 0) & (w < 1))
    zero_params(ca)
    np.testing.assert_array_equal(ca(x).data, np.full((2, 8, 1, 1), 0.5))


def test_channel_attention_spatial_permutation_invariance():
    ca = ChannelAttention(6, rng=np.random.default_rng(2))
    x = feature((1, 6, 4, 5), 3)
    perm = np.random.default_rng(4).permutation(20)
    shuffled = Tensor(x.data.reshape(1, 6, 20)[:, :, perm].reshape(1, 6, 4, 5))
    # avg pooling sums in a different order, so allow for last-bit rounding there
    np.testing.assert_allclose(ca(shuffled).data, ca(x).data, rtol=1e-15, atol=0)


def test_channel_attention_hidden_width():
    assert ChannelAttention(3, reduction=4).fc1.weight.shape == (1, 3)
    assert ChannelAttention(16, reduction=4).fc1.weight.shape == (4, 16)


def test_spatial_attention_zero_weights_and_channel_permutation():
    sa = SpatialAttention(7, rng=np.random.default_rng(5))
    x = feature((2, 5, 6, 6), 6)
    w = sa(x).data
    assert w.shape == (2, 1, 6, 6) and np.all((w > 0) & (w < 1))
    perm = np.random.default_rng(7).permutation(5)
    np.testing.assert_allclose(sa(Tensor(x.data[:, perm])).data, w, rtol=1e-15, atol=0)
    zero_params(sa)
    np.testing.assert_array_equal(sa(x).data, np.full((2, 1, 6, 6), 0.5))


def test_cbam_identity_and_quarter():
    x = feature((1, 8, 6, 6), 8)
    cbam = CBAM(8, rng=np.random.default_rng(9))
    zero_params(cbam)
    np.testing.assert_allclose(cbam(x).data, 0.25 * x.data, rtol=1e-15)
    # saturate both gates: large positive biases drive the sigmoids to exactly 1.0
    cbam.channel.fc2.bias.data[...] = 100.0
    cbam.spatial.conv.bias.data[...] = 100.0
    np.testing.assert_array_equal(cbam(x).data, x.data)


def test_cbam_is_channel_then_spatial():
    x = feature((2, 8, 7, 5), 10)
    cbam = CBAM(8, rng=np.random.default_rng(11))
    fc = T.mul_broadcast(x, cbam.channel(x))
    expected = T.mul_broadcast(fc, cbam.spatial(fc))
    assert np.array_equal(cbam(x).data, expected.data)
    assert cbam(x).shape == x.shape


def test_channel_gate_multiplies():
    x = feature((1, 4, 3, 3), 12)
    gate = ChannelGate(4, rng=np.random.default_rng(13))
    np.testing.assert_array_equal(gate(x).data, (x.data * gate.channel(x).data))


@pytest.mark.parametrize("make", [
    lambda: ChannelAttention(8, rng=np.random.default_rng(1)),
    lambda: SpatialAttention(7, rng=np.random.default_rng(2)),
    lambda: CBAM(8, rng=np.random.default_rng(3)),
])
def test_attention_gradients(make):
    module = make()
    x = feature((2, 8, 6, 6), 14)
    assert finite_diff_check(lambda t: weighted(module(t)), x) < 1e-4
    for p in module.parameters():
        assert finite_diff_check(lambda t: weighted(module(x)), p) < 1e-4


# ---------------------------------------------------------------- RSU


def test_rsu_shape_contract():
    rsu = RSU(7, 3, 4, 8, rng=np.random.default_rng(0))
    assert rsu(Tensor(np.random.default_rng(1).random((1, 3, 64, 64)))).shape == (1, 8, 64, 64)


@pytest.mark.parametrize("n,dilated,size", [(2, False, 5), (3, False, 9), (4, False, 12), (5, False, 8),
                                              (4, True, 3), (3, True, 1)])
def test_rsu_preserves_size(n, dilated, size):
    rsu = RSU(n, 2, 3, 4, dilated, rng=np.random.default_rng(n))
    x = Tensor(np.random.default_rng(2).normal(size=(2, 2, size, size + 1)))
    assert rsu(x).shape == (2, 4, size, size + 1)


def test_rsu_too_small_input():
    rsu = RSU(5, 2, 3, 4, rng=np.random.default_rng(0))
    assert rsu.min_size() == 8
    with pytest.raises(ConfigurationError, match="n=5"):
        rsu(Tensor(np.zeros((1, 2, 7, 16))))
    with pytest.raises(ConfigurationError):
        RSU(1, 2, 3, 4)


def test_rsu_structure():
    rsu = RSU(5, 3, 4, 6, rng=np.random.default_rng(0))
    assert len(rsu.enc) == 4 and len(rsu.dec) == 4
    assert rsu.bottom.conv.dilation == 2
    dil = RSU(4, 3, 4, 6, dilated=True, rng=np.random.default_rng(0))
    assert [c.conv.dilation for c in dil.enc] == [1, 2, 4]
    assert dil.bottom.conv.dilation == 8


def test_rsu_residual_identity():
    rsu = RSU(4, 3, 4, 5, rng=np.random.default_rng(3))
    for m in rsu.internal_modules():
        zero_params(m)
    x = Tensor(np.random.default_rng(4).normal(size=(2, 3, 16, 16)))
    np.testing.assert_array_equal(rsu(x).data, rsu.conv_in(x).data)


@pytest.mark.parametrize("dilated", [False, True])
def test_micro_rsu_gradients(dilated):
    rsu = RSU(3, 2, 3, 4, dilated, rng=np.random.default_rng(5))
    x = feature((2, 2, 8, 8), 15)
    assert finite_diff_check(lambda t: weighted(rsu(t)), x) < 1e-4
    for name, p in rsu.named_parameters():
        err = finite_diff_check(lambda t: weighted(rsu(x)), p, n_coords=16)
        assert err < 1e-4, name


# ---------------------------------------------------------------- CF block


def sides(seed=0, n=2, sizes=(8, 4, 2, 1, 8, 3)):
    rng = np.random.default_rng(seed)
    return [Tensor(rng.random((n, 1, s, s)), requires_grad=True) for s in sizes]


def test_cf_constant_sides_average():
    cf = CFBlock(rng=np.random.default_rng(0))
    cf.squeeze.fc1.weight.data[...] = 0.0
    cf.squeeze.fc2.weight.data[...] = 0.0
    cf.squeeze.fc2.bias.data[...] = 100.0  # channel weights exactly 1
    cf.out_conv.weight.data[...] = 0.0
    cf.out_conv.weight.data[:, :, 1, 1] = 1 / 6  # centre tap: averaging over the 6 channels
    cf.out_conv.bias.data[...] = 0.0
    c = 0.37
    out = cf([Tensor(np.full((1, 1, s, s), c)) for s in (8, 4, 2, 1, 8, 3)], 8, 8)
    np.testing.assert_allclose(out.data, np.full((1, 1, 8, 8), c), rtol=1e-14)


def test_cf_permutation_equivariance():
    cf = CFBlock(rng=np.random.default_rng(1))
    xs = sides(2)
    perm = [1, 0, 2, 3, 4, 5]
    base = cf(xs, 8, 8).data
    swapped = CFBlock(rng=np.random.default_rng(1))
    swapped.squeeze.fc1.weight.data[...] = cf.squeeze.fc1.weight.data[:, perm]
    swapped.squeeze.fc2.weight.data[...] = cf.squeeze.fc2.weight.data[perm]
    swapped.squeeze.fc2.bias.data[...] = cf.squeeze.fc2.bias.data[perm]
    swapped.out_conv.weight.data[...] = cf.out_conv.weight.data[:, perm]
    np.testing.assert_allclose(swapped([xs[i] for i in perm], 8, 8).data, base, rtol=1e-12)


def test_cf_depends_on_every_side_and_wrong_count():
    cf = CFBlock(rng=np.random.default_rng(3))
    xs = sides(4)
    base = cf(xs, 8, 8).data
    for i in range(6):
        bumped = list(xs)
        bumped[i] = Tensor(xs[i].data + 0.1)
        assert not np.allclose(cf(bumped, 8, 8).data, base)
    with pytest.raises(ConfigurationError):
        cf(xs[:5], 8, 8)
    with pytest.raises(ConfigurationError):
        ConcatFusion()(xs[:5], 8, 8)


def test_cf_gradients():
    cf = CFBlock(rng=np.random.default_rng(5))
    xs = sides(6, sizes=(8,) * 6)
    for i in (0, 3, 5):
        assert finite_diff_check(lambda t: weighted(cf(xs, 8, 8)), xs[i]) < 1e-4
    for p in cf.parameters():
        assert finite_diff_check(lambda t: weighted(cf(xs, 8, 8)), p) < 1e-4


# ---------------------------------------------------------------- layers


def test_init_is_kaiming_uniform_and_seeded():
    conv = Conv2d(4, 8, 3, rng=np.random.default_rng(0))
    bound = np.sqrt(6 / (4 * 9))
    assert np.abs(conv.weight.data).max() <= bound and not conv.bias.data.any()
    again = Conv2d(4, 8, 3, rng=np.random.default_rng(0))
    assert np.array_equal(conv.weight.data, again.weight.data)
    lin = Linear(10, 3, rng=np.random.default_rng(1))
    assert np.abs(lin.weight.data).max() <= np.sqrt(0.6)


def test_state_dict_round_trip():
    rsu = RSU(3, 2, 3, 4, rng=np.random.default_rng(0))
    other = RSU(3, 2, 3, 4, rng=np.random.default_rng(1))
    other.load_state_dict(rsu.state_dict())
    for (n1, a), (n2, b) in zip(rsu.state_dict().items(), other.state_dict().items()):
        assert n1 == n2 and np.array_equal(a, b)
    with pytest.raises(KeyError):
        other.load_state_dict({"nope": np.zeros(1)})
