"""Exact merging of consecutive convolutions.

Reference semantics is cross-correlation with symmetric zero padding (the
convention of CNN frameworks).  ``forward_conv`` is a direct convolution and
serves as the oracle for everything else in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ActivationInside,
    ChannelMismatch,
    InfeasibleSegment,
    NotFusable,
    ShapeMismatch,
)
from .network import BatchNormParams, ConvLayer, NetworkSpec, SkipConnection, segment_view


@dataclass(frozen=True, eq=False)
class Kernel4:
    """Convolution weights of shape (c_out, c_in // groups, k, k) plus optional bias."""

    weight: np.ndarray
    groups: int = 1
    bias: np.ndarray | None = None

    def __post_init__(self):
        w = self.weight
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ShapeMismatch(f"kernel must be (c_out, c_in/g, k, k) with odd k, got {w.shape}")
        if w.shape[0] % self.groups:
            raise ShapeMismatch(f"c_out={w.shape[0]} not divisible by groups={self.groups}")
        if self.bias is not None and self.bias.shape != (w.shape[0],):
            raise ShapeMismatch(f"bias shape {self.bias.shape} does not match c_out={w.shape[0]}")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def size(self) -> int:
        return self.weight.shape[2]

    def bias_or_zero(self) -> np.ndarray:
        if self.bias is None:
            return np.zeros(self.out_channels, dtype=self.weight.dtype)
        return self.bias

    def astype(self, dtype) -> "Kernel4":
        bias = None if self.bias is None else self.bias.astype(dtype)
        return Kernel4(self.weight.astype(dtype), self.groups, bias)


@dataclass(frozen=True, eq=False)
class MergedLayer:
    kernel: Kernel4
    stride: int
    padding: int
    source_span: tuple[int, int]


@dataclass(frozen=True)
class MergedShape:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int
    padding: int
    groups: int


def pad_input(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def forward_conv(x: np.ndarray, k: Kernel4, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct grouped cross-correlation of ``x`` (n, c, h, w)."""
    n, c, h, w = x.shape
    if c != k.in_channels:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {k.in_channels}")
    K = k.size
    ho = (h + 2 * padding - K) // stride + 1
    wo = (w + 2 * padding - K) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeMismatch(f"kernel {K} does not fit a {h}x{w} input with padding {padding}")
    xp = pad_input(x, padding)
    g = k.groups
    cin, cout = c // g, k.out_channels // g
    xg = xp.reshape(n, g, cin, xp.shape[2], xp.shape[3])
    wg = k.weight.reshape(g, cout, cin, K, K)
    out = np.zeros((n, g, cout, ho, wo), dtype=np.result_type(x, k.weight))
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for u in range(K):
        for v in range(K):
            patch = xg[:, :, :, u : u + span_h : stride, v : v + span_w : stride]
            out += np.einsum("ngchw,goc->ngohw", patch, wg[:, :, :, u, v])
    out = out.reshape(n, k.out_channels, ho, wo)
    if k.bias is not None:
        out += k.bias.reshape(1, -1, 1, 1)
    return out


def expand_depthwise(k: Kernel4) -> Kernel4:
    """Dense (groups=1) kernel equal in function to a grouped one."""
    if k.groups == 1:
        return k
    g = k.groups
    cout, cin_g, K, _ = k.weight.shape
    cout_g = cout // g
    dense = np.zeros((cout, cin_g * g, K, K), dtype=k.weight.dtype)
    for grp in range(g):
        o = slice(grp * cout_g, (grp + 1) * cout_g)
        i = slice(grp * cin_g, (grp + 1) * cin_g)
        dense[o, i] = k.weight[o]
    return Kernel4(dense, 1, k.bias)


def fold_bn(bn: BatchNormParams | None, kernel: Kernel4) -> Kernel4:
    """Absorb an inference-mode batch norm into the preceding convolution."""
    if bn is None:
        return kernel
    scale = bn.scale()
    weight = kernel.weight * scale.reshape(-1, 1, 1, 1)
    bias = bn.beta + scale * (kernel.bias_or_zero() - bn.running_mean)
    return Kernel4(weight.astype(kernel.weight.dtype), kernel.groups, bias.astype(kernel.weight.dtype))


def compose_kernels(k2: Kernel4, k1: Kernel4, s1: int) -> Kernel4:
    """Single kernel equivalent to ``k1`` (stride ``s1``) followed by ``k2`` with no padding.

    The merged kernel has size K1 + (K2 - 1) * s1 and stride s1 * s2.  The
    second stage must see no zero padding for the bias term to be exact; move
    it to the first stage with ``reorder_padding``.
    """
    if k1.groups != 1 or k2.groups != 1:
        k1, k2 = expand_depthwise(k1), expand_depthwise(k2)
    if k2.in_channels != k1.out_channels:
        raise ChannelMismatch(-1, f"second kernel expects {k2.in_channels} channels, first yields {k1.out_channels}")
    K1, K2 = k1.size, k2.size
    Km = K1 + (K2 - 1) * s1
    dtype = np.result_type(k1.weight, k2.weight)
    weight = np.zeros((k2.out_channels, k1.in_channels, Km, Km), dtype=dtype)
    # cross-correlation: output tap (s1*v + u) collects k2[v] * k1[u]
    for vh in range(K2):
        for vw in range(K2):
            weight[:, :, s1 * vh : s1 * vh + K1, s1 * vw : s1 * vw + K1] += np.einsum(
                "oc,cihw->oihw", k2.weight[:, :, vh, vw], k1.weight
            )
    bias = None
    if k1.bias is not None or k2.bias is not None:
        bias = k2.bias_or_zero() + k2.weight.sum(axis=(2, 3)) @ k1.bias_or_zero()
    return Kernel4(weight, 1, bias)


def fuse_skip(kernel: Kernel4, stride: int = 1) -> Kernel4:
    """Kernel computing f(x) + x, by adding a channel delta at the kernel center."""
    if kernel.in_channels != kernel.out_channels:
        raise NotFusable(f"{kernel.in_channels} input vs {kernel.out_channels} output channels")
    if stride != 1:
        raise NotFusable(f"stride {stride}")
    weight = kernel.weight.copy()
    c = kernel.size // 2
    cin_g = weight.shape[1]
    for ch in range(kernel.out_channels):
        weight[ch, ch % cin_g, c, c] += 1.0
    return Kernel4(weight, kernel.groups, kernel.bias)


def reorder_padding(layers: Sequence[ConvLayer]) -> list[int]:
    """Move a segment's zero padding onto its first layer.

    Returns the new per-layer paddings: P = sum_l p_l * prod_{m<l} s_m on the
    first layer and zeros elsewhere.
    """
    total, stride = 0, 1
    for layer in layers:
        total += layer.padding * stride
        stride *= layer.stride
    return [total] + [0] * (len(layers) - 1)


def merged_shape(net: NetworkSpec, i: int, j: int) -> MergedShape:
    """Geometry of the single layer replacing layers i+1..j, without touching weights."""
    seg = segment_view(net, i, j)
    if seg.straddling:
        raise InfeasibleSegment((i, j), f"skip {seg.straddling[0]} straddles the segment")
    first = seg.layers[0]
    if len(seg.layers) == 1:
        return MergedShape(
            first.in_channels, first.out_channels, first.kernel_size, first.stride, first.padding, first.groups
        )
    K, stride = first.kernel_size, first.stride
    for layer in seg.layers[1:]:
        K += (layer.kernel_size - 1) * stride
        stride *= layer.stride
    pad = reorder_padding(seg.layers)[0]
    return MergedShape(first.in_channels, seg.layers[-1].out_channels, K, stride, pad, 1)


def _outermost_skip(skips, a: int, b: int, pos: int):
    """Largest skip starting at ``pos`` inside (a, b), excluding (a, b) itself."""
    best = None
    for s in skips:
        if s.start == pos and s.end <= b and (s.start, s.end) != (a, b):
            if best is None or s.end > best.end:
                best = s
    return best


def merge_segment(net: NetworkSpec, weights: Sequence[Kernel4], i: int, j: int) -> MergedLayer:
    """Collapse layers i+1..j (with their batch norms and contained skips) into one layer.

    A one-layer segment keeps its grouping; longer segments become dense.
    """
    seg = segment_view(net, i, j)
    if seg.straddling:
        raise InfeasibleSegment((i, j), f"skip {seg.straddling[0]} straddles the segment")
    for l in range(i + 1, j):
        if not net.activation(l).is_identity:
            raise ActivationInside(l)

    folded = {l: fold_bn(net.layer(l).bn, weights[l - 1]) for l in range(i + 1, j + 1)}
    if j - i > 1:
        folded = {l: expand_depthwise(k) for l, k in folded.items()}
    skips = set(seg.skips)

    def build(a: int, b: int) -> tuple[Kernel4, int]:
        kernel, stride = None, 1
        pos = a
        while pos < b:
            inner = _outermost_skip(skips, a, b, pos)
            if inner is not None:
                part, part_stride = build(inner.start, inner.end)
                pos = inner.end
            else:
                part, part_stride = folded[pos + 1], net.layer(pos + 1).stride
                pos += 1
            if kernel is None:
                kernel, stride = part, part_stride
            else:
                kernel = compose_kernels(part, kernel, stride)
                stride *= part_stride
        if SkipConnection(a, b) in skips:
            kernel = fuse_skip(kernel, stride)
        return kernel, stride

    kernel, stride = build(i, j)
    padding = reorder_padding(seg.layers)[0]
    return MergedLayer(kernel, stride, padding, (i, j))
