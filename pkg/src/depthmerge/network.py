"""Declarative description of a sequential CNN.

Layers are numbered 1..L as in the planner; ``net.layers[l - 1]`` is layer
``l`` and its ``activation`` is the function applied after it.  Boundary
``k`` is the feature map between layer ``k`` and layer ``k + 1``; boundary 0
is the network input.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ChannelMismatch,
    CrossingSkips,
    NetworkError,
    NonOddKernel,
    NonPositiveSpatialDim,
    SkipShapeMismatch,
)


class Activation(enum.Enum):
    IDENTITY = "id"
    RELU = "relu"
    RELU6 = "relu6"

    @property
    def is_identity(self) -> bool:
        return self is Activation.IDENTITY

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.IDENTITY:
            return x
        if self is Activation.RELU:
            return np.maximum(x, 0)
        return np.clip(x, 0, 6)


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5) -> "BatchNormParams":
        return cls(
            np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels), eps
        )

    def __len__(self) -> int:
        return len(self.gamma)

    def scale(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.running_var + self.eps)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        shape = (1, -1, 1, 1)
        return (x - self.running_mean.reshape(shape)) * self.scale().reshape(shape) + self.beta.reshape(shape)

    def check(self, channels: int, layer: int) -> None:
        for name in ("gamma", "beta", "running_mean", "running_var"):
            if len(getattr(self, name)) != channels:
                raise ChannelMismatch(layer, f"batch-norm {name} has length {len(getattr(self, name))}")
        if np.any(self.running_var < 0) or not self.eps > 0:
            raise NetworkError(f"layer {layer}: batch-norm variance must be >= 0 and eps > 0")


@dataclass(frozen=True, eq=False)
class ConvLayer:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = False
    bn: BatchNormParams | None = None
    activation: Activation = Activation.IDENTITY

    @property
    def is_depthwise(self) -> bool:
        return self.groups > 1 and self.groups == self.in_channels == self.out_channels

    def out_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel_size) // self.stride + 1

    def describe(self) -> str:
        kind = "dw" if self.is_depthwise else ("g%d" % self.groups if self.groups > 1 else "")
        return (
            f"{kind}conv{self.kernel_size}x{self.kernel_size} {self.in_channels}->{self.out_channels}"
            f" s{self.stride} p{self.padding} {self.activation.value}"
        )


@dataclass(frozen=True, order=True)
class SkipConnection:
    """Residual add: the output of layer ``end`` receives boundary ``start``."""

    start: int
    end: int

    def contained_in(self, i: int, j: int) -> bool:
        return i <= self.start and self.end <= j

    def straddles(self, i: int, j: int) -> bool:
        """True when exactly one side of the skip lies strictly inside (i, j)."""
        s, e = self.start, self.end
        return (i < s < j and e > j) or (s < i and i < e < j)


@dataclass(frozen=True)
class Segment:
    i: int
    j: int
    layers: tuple[ConvLayer, ...]
    skips: tuple[SkipConnection, ...]
    straddling: tuple[SkipConnection, ...]


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    layers: tuple[ConvLayer, ...]
    skips: tuple[SkipConnection, ...] = ()
    input_channels: int = 3
    input_height: int = 224
    input_width: int = 224
    name: str = ""
    # set on networks whose padding was moved to segment heads; residual
    # adds then align the shortcut by center crop / zero pad
    padding_reordered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "skips", tuple(sorted(self.skips)))

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.input_channels, self.input_height, self.input_width)

    def layer(self, l: int) -> ConvLayer:
        """Layer ``l`` in 1-based numbering."""
        return self.layers[l - 1]

    def activation(self, l: int) -> Activation:
        """Activation at boundary ``l``; the raw input (boundary 0) counts as identity."""
        if l == 0:
            return Activation.IDENTITY
        return self.layers[l - 1].activation

    def activations(self) -> list[Activation]:
        return [self.activation(l) for l in range(self.L + 1)]

    def with_layers(self, layers: Sequence[ConvLayer], skips=None) -> "NetworkSpec":
        return replace(self, layers=tuple(layers), skips=self.skips if skips is None else tuple(skips))


def shape_trace(net: NetworkSpec) -> list[tuple[int, int, int]]:
    """(channels, height, width) at every boundary 0..L."""
    shapes = [net.input_shape]
    c, h, w = net.input_shape
    for l, layer in enumerate(net.layers, start=1):
        h, w = layer.out_size(h), layer.out_size(w)
        if h <= 0 or w <= 0:
            raise NonPositiveSpatialDim(l)
        c = layer.out_channels
        shapes.append((c, h, w))
    return shapes


def validate_network(net: NetworkSpec) -> None:
    if net.L == 0:
        raise NetworkError("network has no layers")
    if min(net.input_shape) <= 0:
        raise NetworkError("input dimensions must be positive")
    prev = net.input_channels
    for l, layer in enumerate(net.layers, start=1):
        if layer.in_channels != prev:
            raise ChannelMismatch(l, f"expects {layer.in_channels} input channels, receives {prev}")
        if min(layer.in_channels, layer.out_channels, layer.kernel_size, layer.stride, layer.groups) <= 0:
            raise NetworkError(f"layer {l}: counts must be positive")
        if layer.padding < 0:
            raise NetworkError(f"layer {l}: negative padding")
        if layer.in_channels % layer.groups or layer.out_channels % layer.groups:
            raise ChannelMismatch(l, f"channels not divisible by groups={layer.groups}")
        if layer.kernel_size % 2 == 0:
            raise NonOddKernel(l)
        if layer.bn is not None:
            layer.bn.check(layer.out_channels, l)
        prev = layer.out_channels
    if not net.layers[-1].activation.is_identity:
        raise NetworkError("the last layer's activation must be identity")

    shapes = shape_trace(net)
    seen = set()
    for skip in net.skips:
        if not 0 <= skip.start < skip.end <= net.L:
            raise SkipShapeMismatch(skip, "endpoints out of range")
        if (skip.start, skip.end) in seen:
            raise CrossingSkips((skip, skip))
        seen.add((skip.start, skip.end))
        (c0, h0, w0), (c1, h1, w1) = shapes[skip.start], shapes[skip.end]
        aligned = (h0, w0) == (h1, w1) or (
            net.padding_reordered and (h0 - h1) % 2 == 0 and (w0 - w1) % 2 == 0
        )
        if c0 != c1 or not aligned:
            raise SkipShapeMismatch(skip, f"{shapes[skip.start]} vs {shapes[skip.end]}")
        stride = int(np.prod([net.layer(l).stride for l in range(skip.start + 1, skip.end + 1)]))
        if stride != 1:
            raise SkipShapeMismatch(skip, f"cumulative stride {stride}")
    for a in net.skips:
        for b in net.skips:
            if a.start < b.start < a.end < b.end:
                raise CrossingSkips((a, b))


def segment_view(net: NetworkSpec, i: int, j: int) -> Segment:
    if not 0 <= i < j <= net.L:
        raise IndexError(f"segment ({i}, {j}) out of range for L={net.L}")
    return Segment(
        i,
        j,
        net.layers[i:j],
        tuple(s for s in net.skips if s.contained_in(i, j)),
        tuple(s for s in net.skips if s.straddles(i, j)),
    )


# -- JSON description ---------------------------------------------------------

def _bn_from_json(obj, channels: int) -> BatchNormParams | None:
    if obj is None or obj is False:
        return None
    if obj is True:
        obj = {}
    eps = float(obj.get("eps", 1e-5))
    ident = BatchNormParams.identity(channels, eps)

    def vec(key, default):
        v = obj.get(key)
        return default if v is None else np.asarray(v, dtype=np.float64)

    return BatchNormParams(
        vec("gamma", ident.gamma),
        vec("beta", ident.beta),
        vec("mean", ident.running_mean),
        vec("var", ident.running_var),
        eps,
    )


def _bn_to_json(bn: BatchNormParams | None, with_stats: bool):
    if bn is None:
        return None
    out = {"eps": bn.eps}
    if with_stats:
        out.update(
            gamma=bn.gamma.tolist(),
            beta=bn.beta.tolist(),
            mean=bn.running_mean.tolist(),
            var=bn.running_var.tolist(),
        )
    return out


def network_from_dict(doc: dict) -> NetworkSpec:
    try:
        inp = doc["input"]
        layers = []
        for entry in doc["layers"]:
            out = int(entry["out"])
            layers.append(
                ConvLayer(
                    in_channels=int(entry["in"]),
                    out_channels=out,
                    kernel_size=int(entry["k"]),
                    stride=int(entry.get("stride", 1)),
                    padding=int(entry.get("pad", 0)),
                    groups=int(entry.get("groups", 1)),
                    has_bias=bool(entry.get("bias", False)),
                    bn=_bn_from_json(entry.get("bn"), out),
                    activation=Activation(entry.get("act", "id")),
                )
            )
        skips = [SkipConnection(int(s["start"]), int(s["end"])) for s in doc.get("skips", [])]
        net = NetworkSpec(
            tuple(layers),
            tuple(skips),
            int(inp["channels"]),
            int(inp["height"]),
            int(inp["width"]),
            name=doc.get("name", ""),
            padding_reordered=bool(doc.get("padding_reordered", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network description: {exc!r}") from exc
    validate_network(net)
    return net


def network_to_dict(net: NetworkSpec, bn_stats: bool = True) -> dict:
    doc = {
        "input": {"channels": net.input_channels, "height": net.input_height, "width": net.input_width},
        "layers": [
            {
                "in": layer.in_channels,
                "out": layer.out_channels,
                "k": layer.kernel_size,
                "stride": layer.stride,
                "pad": layer.padding,
                "groups": layer.groups,
                "bias": layer.has_bias,
                "bn": _bn_to_json(layer.bn, bn_stats),
                "act": layer.activation.value,
            }
            for layer in net.layers
        ],
        "skips": [{"start": s.start, "end": s.end} for s in net.skips],
    }
    if net.padding_reordered:
        doc["padding_reordered"] = True
    if net.name:
        doc = {"name": net.name, **doc}
    return doc


def load_network(path) -> NetworkSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise NetworkError(f"{path}: expected a JSON object")
    return network_from_dict(doc)


def save_network(net: NetworkSpec, path, bn_stats: bool = True) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net, bn_stats), indent=1) + "\n", encoding="utf-8")


# -- reference architectures ---------------------------------------------------

# (expansion t, output channels c, repeats n, first stride s)
_MBV2_SETTINGS = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
]


def mobilenet_v2(width_mult: float = 1.0, resolution: int = 224) -> NetworkSpec:
    """Convolutional backbone of MobileNetV2 (stem to the 1280-channel 1x1 conv).

    The pooling/classifier head is not part of the layer chain; the final
    conv's activation is replaced by identity so that sigma_L = id.
    """

    def div8(v):
        new = max(8, int(v + 4) // 8 * 8)
        return new + 8 if new < 0.9 * v else new

    relu6 = Activation.RELU6
    ident = Activation.IDENTITY
    layers: list[ConvLayer] = []
    skips: list[SkipConnection] = []

    def add(cin, cout, k, s, groups, act):
        layers.append(ConvLayer(cin, cout, k, s, (k - 1) // 2, groups, False, BatchNormParams.identity(cout), act))

    c = div8(32 * width_mult)
    add(3, c, 3, 2, 1, relu6)
    for t, ch, n, s in _MBV2_SETTINGS:
        out = div8(ch * width_mult)
        for r in range(n):
            stride = s if r == 0 else 1
            start = len(layers)
            hidden = c * t
            if t != 1:
                add(c, hidden, 1, 1, 1, relu6)
            add(hidden, hidden, 3, stride, hidden, relu6)
            add(hidden, out, 1, 1, 1, ident)
            if stride == 1 and c == out:
                skips.append(SkipConnection(start, len(layers)))
            c = out
    last = div8(1280 * max(1.0, width_mult))
    add(c, last, 1, 1, 1, ident)
    net = NetworkSpec(tuple(layers), tuple(skips), 3, resolution, resolution, name=f"mobilenet_v2_{width_mult}")
    validate_network(net)
    return net
