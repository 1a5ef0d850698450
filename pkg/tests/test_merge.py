import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_segment_net
from depthmerge.errors import ActivationInside, InfeasibleSegment, NotFusable
from depthmerge.execute import forward_network, prepare_reference, random_weights, relative_diff
from depthmerge.merge import (
    Kernel4,
    compose_kernels,
    expand_depthwise,
    fold_bn,
    forward_conv,
    fuse_skip,
    merge_segment,
    merged_shape,
    reorder_padding,
)
from depthmerge.network import Activation, BatchNormParams, ConvLayer, NetworkSpec, SkipConnection
from depthmerge.plan import Plan


def _kernel(rng, cout, cin, K, groups=1, bias=False):
    w = rng.standard_normal((cout, cin // groups, K, K))
    return Kernel4(w, groups, rng.standard_normal(cout) if bias else None)


def _seq(layers, kernels, x):
    for (stride, pad), k in zip(layers, kernels):
        x = forward_conv(x, k, stride, pad)
    return x


def test_forward_conv_matches_explicit_loops(rng):
    x = rng.standard_normal((1, 2, 6, 6))
    k = _kernel(rng, 3, 2, 3, bias=True)
    y = forward_conv(x, k, stride=2, padding=1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = (xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * k.weight[o]).sum() + k.bias[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


@pytest.mark.parametrize("K", [1, 3, 5])
def test_two_stride_one_layers_give_kernel_2k_minus_1(rng, K):
    k1, k2 = _kernel(rng, 3, 2, K), _kernel(rng, 4, 3, K)
    merged = compose_kernels(k2, k1, 1)
    assert merged.size == 2 * K - 1
    x = rng.standard_normal((2, 2, 12, 12))
    np.testing.assert_allclose(forward_conv(x, merged), _seq([(1, 0), (1, 0)], [k1, k2], x), atol=1e-12)


def test_strided_composition_widens_by_stride(rng):
    k1, k2 = _kernel(rng, 3, 2, 3, bias=True), _kernel(rng, 2, 3, 3, bias=True)
    merged = compose_kernels(k2, k1, 2)
    assert merged.size == 3 + 2 * 2
    x = rng.standard_normal((1, 2, 15, 15))
    np.testing.assert_allclose(forward_conv(x, merged, 2), _seq([(2, 0), (1, 0)], [k1, k2], x), atol=1e-12)


def test_padding_moves_to_the_first_layer():
    layers = [ConvLayer(1, 1, 3, 2, 1), ConvLayer(1, 1, 3, 1, 1), ConvLayer(1, 1, 5, 2, 2)]
    assert reorder_padding(layers) == [1 + 2 * 1 + 2 * 2, 0, 0]


def test_reordered_padding_is_exact_and_original_padding_differs_at_borders(rng):
    k1, k2 = _kernel(rng, 2, 2, 3), _kernel(rng, 2, 2, 3)
    x = rng.standard_normal((1, 2, 9, 9))
    merged = compose_kernels(k2, k1, 1)
    y_merged = forward_conv(x, merged, 1, 2)
    y_reordered = _seq([(1, 2), (1, 0)], [k1, k2], x)
    y_original = _seq([(1, 1), (1, 1)], [k1, k2], x)
    np.testing.assert_allclose(y_reordered, y_merged, atol=1e-12)
    diff = np.abs(y_original - y_merged)
    assert diff[..., 1:-1, 1:-1].max() < 1e-12
    assert diff.max() > 1e-3


def test_bn_folding(rng):
    k = _kernel(rng, 3, 2, 3, bias=True)
    bn = BatchNormParams(rng.uniform(0.5, 2, 3), rng.standard_normal(3), rng.standard_normal(3), rng.uniform(0.5, 2, 3), 1e-3)
    x = rng.standard_normal((1, 2, 7, 7))
    np.testing.assert_allclose(forward_conv(x, fold_bn(bn, k), 1, 1), bn(forward_conv(x, k, 1, 1)), atol=1e-12)
    assert fold_bn(None, k) is k


def test_grouped_kernel_expansion(rng):
    k = _kernel(rng, 6, 4, 3, groups=2, bias=True)
    dense = expand_depthwise(k)
    assert dense.groups == 1 and dense.weight.shape == (6, 4, 3, 3)
    x = rng.standard_normal((1, 4, 6, 6))
    np.testing.assert_allclose(forward_conv(x, dense, 1, 1), forward_conv(x, k, 1, 1), atol=1e-12)


@pytest.mark.parametrize("groups", [1, 3])
def test_skip_fusion_adds_identity(rng, groups):
    k = _kernel(rng, 3, 3, 3, groups=groups)
    x = rng.standard_normal((1, 3, 6, 6))
    np.testing.assert_allclose(forward_conv(x, fuse_skip(k), 1, 1), forward_conv(x, k, 1, 1) + x, atol=1e-12)


def test_skip_fusion_rejects_bad_shapes(rng):
    with pytest.raises(NotFusable):
        fuse_skip(_kernel(rng, 4, 3, 3))
    with pytest.raises(NotFusable):
        fuse_skip(_kernel(rng, 3, 3, 3), stride=2)


def _chain(layers, skips=(), size=10):
    return NetworkSpec(tuple(layers), tuple(skips), layers[0].in_channels, size, size)


def test_merging_across_a_live_activation_is_refused(rng):
    net = _chain([ConvLayer(2, 2, 3, 1, 1, activation=Activation.RELU), ConvLayer(2, 2, 3, 1, 1)])
    _, w = random_weights(net, 0)
    with pytest.raises(ActivationInside):
        merge_segment(net, w, 0, 2)


def test_straddling_skip_is_refused():
    net = _chain([ConvLayer(2, 2, 1)] * 3, [SkipConnection(1, 3)])
    _, w = random_weights(net, 0)
    with pytest.raises(InfeasibleSegment):
        merge_segment(net, w, 0, 2)
    with pytest.raises(InfeasibleSegment):
        merged_shape(net, 0, 2)


def test_single_layer_keeps_grouping():
    net = _chain([ConvLayer(4, 4, 3, 1, 1, groups=4), ConvLayer(4, 4, 1)])
    assert merged_shape(net, 0, 1).groups == 4
    assert merged_shape(net, 0, 2).groups == 1 and merged_shape(net, 0, 2).kernel_size == 3


def test_inverted_residual_block_merges_exactly():
    layers = [
        ConvLayer(3, 12, 1, bn=BatchNormParams.identity(12)),
        ConvLayer(12, 12, 3, 1, 1, 12, bn=BatchNormParams.identity(12)),
        ConvLayer(12, 3, 1, bn=BatchNormParams.identity(3)),
    ]
    net, w = random_weights(_chain(layers, [SkipConnection(0, 3)], 8), 1)
    ref = prepare_reference(net, Plan(3, (), (), (), 0, 0.0, 1))
    assert [layer.padding for layer in ref.layers] == [1, 0, 0]
    merged = merge_segment(ref, w, 0, 3)
    assert merged.kernel.size == 3 and merged.padding == 1
    x = np.random.default_rng(0).standard_normal((2, 3, 8, 8))
    y = forward_conv(x, merged.kernel, merged.stride, merged.padding)
    np.testing.assert_allclose(y, forward_network(ref, w, x), atol=1e-10)
    # with the padding left on the depthwise layer the borders change
    assert np.abs(y - forward_network(net, w, x)).max() > 1e-6


def _segment_diff(net, seed, dtype):
    net, w = random_weights(net, seed)
    plan = Plan(net.L, (), (), (), 0, 0.0, 1)
    ref = prepare_reference(net, plan)
    w = [k.astype(dtype) for k in w]
    merged = merge_segment(ref, w, 0, net.L)
    x = np.random.default_rng([seed, 1]).standard_normal((2, *net.input_shape)).astype(dtype)
    a = forward_network(ref, w, x)
    b = forward_conv(x, merged.kernel, merged.stride, merged.padding)
    assert a.shape == b.shape and b.dtype == dtype
    return np.abs(a.astype(np.float64) - b.astype(np.float64)).max(), relative_diff(a, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_segments_merge_exactly(seed):
    net = random_segment_net(np.random.default_rng(seed))
    abs64, _ = _segment_diff(net, seed, np.float64)
    assert abs64 <= 1e-9
    _, rel32 = _segment_diff(net, seed, np.float32)
    assert rel32 <= 1e-4
