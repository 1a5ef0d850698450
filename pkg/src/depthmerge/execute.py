"""Running networks: weights, forward passes, plan application and equivalence checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InfeasibleSegment, PlanError, ShapeMismatch
from .merge import Kernel4, forward_conv, merge_segment, reorder_padding
from .network import Activation, BatchNormParams, ConvLayer, NetworkSpec, SkipConnection, validate_network
from .plan import Plan

Weights = list[Kernel4]


# -- weights ------------------------------------------------------------------

def random_weights(net: NetworkSpec, seed: int = 0, dtype=np.float64) -> tuple[NetworkSpec, Weights]:
    """He-initialised kernels plus randomised batch-norm statistics for layers that carry BN."""
    rng = np.random.default_rng(seed)
    layers, kernels = [], []
    for layer in net.layers:
        cin_g = layer.in_channels // layer.groups
        fan_in = cin_g * layer.kernel_size**2
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (layer.out_channels, cin_g, layer.kernel_size, layer.kernel_size))
        bias = rng.normal(0.0, 0.1, layer.out_channels) if layer.has_bias else None
        kernels.append(Kernel4(w.astype(dtype), layer.groups, None if bias is None else bias.astype(dtype)))
        bn = layer.bn
        if bn is not None:
            c = layer.out_channels
            bn = BatchNormParams(
                rng.uniform(0.5, 1.5, c),
                rng.normal(0.0, 0.1, c),
                rng.normal(0.0, 0.1, c),
                rng.uniform(0.5, 1.5, c),
                bn.eps,
            )
        layers.append(replace(layer, bn=bn))
    return net.with_layers(layers), kernels


def _bn_doc(bn):
    if bn is None:
        return None
    return {
        "gamma": bn.gamma.tolist(),
        "beta": bn.beta.tolist(),
        "mean": bn.running_mean.tolist(),
        "var": bn.running_var.tolist(),
        "eps": bn.eps,
    }


def save_weights(path, kernels: Sequence[Kernel4], net: NetworkSpec | None = None) -> None:
    """Write kernels (and the network's BN statistics, if given) as JSON or ``.npz``."""
    path = Path(path)
    bns = [layer.bn for layer in net.layers] if net is not None else [None] * len(kernels)
    if path.suffix == ".npz":
        arrays = {}
        for l, (k, bn) in enumerate(zip(kernels, bns), start=1):
            arrays[f"w{l}"] = k.weight
            arrays[f"g{l}"] = np.array(k.groups)
            if k.bias is not None:
                arrays[f"b{l}"] = k.bias
            if bn is not None:
                arrays[f"bn{l}"] = np.stack([bn.gamma, bn.beta, bn.running_mean, bn.running_var])
                arrays[f"eps{l}"] = np.array(bn.eps)
        np.savez(path, count=np.array(len(kernels)), **arrays)
        return
    doc = {
        "layers": [
            {
                "shape": list(k.weight.shape),
                "groups": k.groups,
                "values": k.weight.ravel().tolist(),
                "bias": None if k.bias is None else k.bias.tolist(),
                "bn": _bn_doc(bn),
            }
            for k, bn in zip(kernels, bns)
        ]
    }
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_weights(path, net: NetworkSpec) -> tuple[NetworkSpec, Weights]:
    """Read kernels; BN statistics stored in the file replace the network's."""
    path = Path(path)
    entries = []
    if path.suffix == ".npz":
        with np.load(path) as data:
            for l in range(1, int(data["count"]) + 1):
                bn = None
                if f"bn{l}" in data:
                    g, b, m, v = data[f"bn{l}"]
                    bn = BatchNormParams(g, b, m, v, float(data[f"eps{l}"]))
                bias = data[f"b{l}"] if f"b{l}" in data else None
                entries.append((Kernel4(data[f"w{l}"], int(data[f"g{l}"]), bias), bn))
    else:
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            for e in doc["layers"]:
                w = np.asarray(e["values"], dtype=np.float64).reshape(e["shape"])
                bias = None if e.get("bias") is None else np.asarray(e["bias"], dtype=np.float64)
                bn = None
                if e.get("bn") is not None:
                    d = e["bn"]
                    bn = BatchNormParams(
                        *(np.asarray(d[key], dtype=np.float64) for key in ("gamma", "beta", "mean", "var")),
                        float(d.get("eps", 1e-5)),
                    )
                entries.append((Kernel4(w, int(e.get("groups", 1)), bias), bn))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ShapeMismatch(f"{path}: malformed weights file ({exc!r})") from exc
    if len(entries) != net.L:
        raise ShapeMismatch(f"{path}: {len(entries)} kernels for a {net.L}-layer network")
    layers, kernels = [], []
    for l, (layer, (k, bn)) in enumerate(zip(net.layers, entries), start=1):
        expected = (layer.out_channels, layer.in_channels // layer.groups, layer.kernel_size, layer.kernel_size)
        if k.weight.shape != expected or k.groups != layer.groups:
            raise ShapeMismatch(f"layer {l}: kernel {k.weight.shape}/g{k.groups} vs layer {expected}/g{layer.groups}")
        kernels.append(k)
        layers.append(replace(layer, bn=bn) if bn is not None else layer)
    out = net.with_layers(layers)
    validate_network(out)
    return out, kernels


# -- forward pass ---------------------------------------------------------------

def align(shortcut: np.ndarray, shape: tuple) -> np.ndarray:
    """Center-crop or zero-pad ``shortcut`` spatially to ``shape``."""
    if shortcut.shape == shape:
        return shortcut
    if shortcut.shape[:2] != shape[:2]:
        raise ShapeMismatch(f"residual {shortcut.shape} cannot join {shape}")
    out = shortcut
    for axis in (2, 3):
        diff = shape[axis] - out.shape[axis]
        if diff % 2:
            raise ShapeMismatch(f"residual {shortcut.shape} cannot join {shape}")
        if diff > 0:
            widths = [(0, 0)] * 4
            widths[axis] = (diff // 2, diff // 2)
            out = np.pad(out, widths)
        elif diff < 0:
            cut = -diff // 2
            out = np.take(out, np.arange(cut, out.shape[axis] - cut), axis=axis)
    return out


def forward_network(net: NetworkSpec, weights: Sequence[Kernel4], x: np.ndarray) -> np.ndarray:
    """Sequential forward: conv, BN, residual adds ending here, then the activation."""
    dtype = x.dtype
    ends: dict[int, list[SkipConnection]] = {}
    for s in net.skips:
        ends.setdefault(s.end, []).append(s)
    boundary = [x]
    for l, (layer, k) in enumerate(zip(net.layers, weights), start=1):
        y = forward_conv(boundary[-1], k.astype(dtype), layer.stride, layer.padding)
        if layer.bn is not None:
            bn = layer.bn
            shape = (1, -1, 1, 1)
            y = (y - bn.running_mean.astype(dtype).reshape(shape)) * bn.scale().astype(dtype).reshape(
                shape
            ) + bn.beta.astype(dtype).reshape(shape)
        for s in ends.get(l, ()):
            y = y + align(boundary[s.start], y.shape)
        boundary.append(layer.activation(y).astype(dtype, copy=False))
    return boundary[-1]


# -- plans ------------------------------------------------------------------------

def planned_activation(net: NetworkSpec, plan: Plan, l: int, inserted: Activation = Activation.RELU6) -> Activation:
    """Activation at boundary ``l`` after the plan: kept, inserted, or identity."""
    if l in plan.A:
        sigma = net.activation(l)
        if sigma.is_identity and plan.mode == "extended":
            return inserted
        return sigma
    return Activation.IDENTITY


def _check_segments(net: NetworkSpec, plan: Plan) -> None:
    plan.validate(net)
    cuts = plan.boundaries()
    for a, b in zip(cuts, cuts[1:]):
        for s in net.skips:
            if s.straddles(a, b):
                raise InfeasibleSegment((a, b), f"skip ({s.start},{s.end}) straddles it")


def prepare_reference(net: NetworkSpec, plan: Plan, inserted: Activation = Activation.RELU6) -> NetworkSpec:
    """The pre-merge network a plan describes: activations set per A, padding reordered per S."""
    _check_segments(net, plan)
    layers = []
    cuts = plan.boundaries()
    for a, b in zip(cuts, cuts[1:]):
        pads = reorder_padding(net.layers[a:b])
        for l, pad in zip(range(a + 1, b + 1), pads):
            act = planned_activation(net, plan, l, inserted) if l < net.L else net.activation(l)
            layers.append(replace(net.layer(l), padding=pad, activation=act))
    out = replace(net.with_layers(layers), padding_reordered=True)
    validate_network(out)
    return out


def apply_plan(
    net: NetworkSpec, weights: Sequence[Kernel4], plan: Plan, inserted: Activation = Activation.RELU6
) -> tuple[NetworkSpec, Weights]:
    """Merge every segment between consecutive cut points into one layer.

    Skips spanning several segments stay as explicit residual adds.
    """
    reference = prepare_reference(net, plan, inserted)
    cuts = plan.boundaries()
    pos = {c: n for n, c in enumerate(cuts)}
    layers, kernels = [], []
    for a, b in zip(cuts, cuts[1:]):
        merged = merge_segment(reference, weights, a, b)
        k = merged.kernel
        layers.append(
            ConvLayer(
                in_channels=k.in_channels,
                out_channels=k.out_channels,
                kernel_size=k.size,
                stride=merged.stride,
                padding=merged.padding,
                groups=k.groups,
                has_bias=k.bias is not None,
                bn=None,
                activation=reference.activation(b),
            )
        )
        kernels.append(k)
    skips = []
    for s in net.skips:
        if any(s.contained_in(a, b) for a, b in zip(cuts, cuts[1:])):
            continue  # fused into a merged kernel
        if s.start not in pos or s.end not in pos:
            raise PlanError(f"skip ({s.start},{s.end}) neither fused nor aligned with cut points")
        skips.append(SkipConnection(pos[s.start], pos[s.end]))
    merged_net = replace(net.with_layers(layers, skips), padding_reordered=False)
    validate_network(merged_net)
    return merged_net, kernels


# -- verification -----------------------------------------------------------------

ABS_TOL_F64 = 1e-9
REL_TOL_F32 = 1e-4


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_diff: float
    max_rel_diff: float
    trials: int
    dtype: str
    passed: bool

    def to_dict(self) -> dict:
        return {
            "max_abs_diff": self.max_abs_diff,
            "max_rel_diff": self.max_rel_diff,
            "trials": self.trials,
            "dtype": self.dtype,
            "passed": self.passed,
        }


def relative_diff(reference: np.ndarray, other: np.ndarray) -> float:
    """Largest deviation relative to the largest reference magnitude.

    Element-wise ratios are meaningless where outputs cancel to near zero, so
    the deviation is scaled by the output's overall magnitude instead.
    """
    diff = float(np.abs(reference.astype(np.float64) - other.astype(np.float64)).max(initial=0.0))
    scale = float(np.abs(reference.astype(np.float64)).max(initial=0.0))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale


def verify_equivalence(
    original: NetworkSpec,
    original_weights: Sequence[Kernel4],
    merged: NetworkSpec,
    merged_weights: Sequence[Kernel4],
    trials: int = 3,
    dtype=np.float64,
    seed: int = 0,
    input_size: int | None = None,
    batch: int = 2,
) -> EquivalenceReport:
    """Feed seeded standard-normal inputs through both networks and compare outputs."""
    dtype = np.dtype(dtype)
    if original.input_shape != merged.input_shape:
        raise ShapeMismatch(f"input shapes differ: {original.input_shape} vs {merged.input_shape}")
    c, h, w = original.input_shape
    if input_size is not None:
        h = w = input_size
    max_abs = max_rel = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        x = rng.standard_normal((batch, c, h, w)).astype(dtype)
        ya = forward_network(original, original_weights, x)
        yb = forward_network(merged, merged_weights, x)
        if ya.shape != yb.shape:
            raise ShapeMismatch(f"outputs differ in shape: {ya.shape} vs {yb.shape}")
        diff = np.abs(ya.astype(np.float64) - yb.astype(np.float64))
        max_abs = max(max_abs, float(diff.max(initial=0.0)))
        max_rel = max(max_rel, relative_diff(ya, yb))
    if dtype == np.float64:
        passed = max_abs <= ABS_TOL_F64
    else:
        passed = max_rel <= REL_TOL_F32
    return EquivalenceReport(max_abs, max_rel, trials, dtype.name, passed)
