"""Shared random-instance generators.

Importances live on a 1/1024 grid and latencies are small integers, so every
objective is an exact binary fraction and solver/oracle scores compare with ==.
"""

from __future__ import annotations

import numpy as np
import pytest

from depthmerge.network import Activation, ConvLayer, NetworkSpec
from depthmerge.tables import CostTable, ImportanceTable


def dyadic(rng, size=None):
    return rng.integers(-1024, 1025, size=size) / 1024.0


def random_cost_table(rng, L, lo=1, hi=20, density=0.7) -> CostTable:
    """Integer ticks; singletons always present, longer blocks with probability ``density``."""
    entries = {}
    for i in range(L):
        for j in range(i + 1, L + 1):
            if j == i + 1 or rng.random() < density:
                entries[(i, j)] = int(rng.integers(lo, hi + 1))
    return CostTable(L, entries, scale=1)


def random_base_importance(rng, L, density=0.9) -> ImportanceTable:
    entries = {
        (i, j): float(dyadic(rng))
        for i in range(L)
        for j in range(i + 1, L + 1)
        if rng.random() < density
    }
    return ImportanceTable(L, entries)


def chain_network(activations, channels=2, size=8) -> NetworkSpec:
    """1x1 conv chain whose boundary activations are ``activations[1..L-1]``; the last is identity."""
    L = len(activations)
    layers = [
        ConvLayer(channels, channels, 1, activation=Activation(activations[l]) if l < L - 1 else Activation.IDENTITY)
        for l in range(L)
    ]
    return NetworkSpec(tuple(layers), (), channels, size, size)


def random_extended_instance(rng, L, density=0.9):
    """(net, T, I): random activations, full latency table, masked extended importances."""
    from depthmerge.tables import edge_bits_allowed

    acts = [str(rng.choice(["id", "relu"])) for _ in range(L)]
    net = chain_network(acts)
    T = random_cost_table(rng, L, density=1.0)
    entries = {
        (i, j, a, b): float(dyadic(rng))
        for i in range(L)
        for j in range(i + 1, L + 1)
        for a in (0, 1)
        for b in (0, 1)
        if edge_bits_allowed(net, i, j, a, b) and rng.random() < density
    }
    return net, T, ImportanceTable(L, entries, "extended")


def max_partition_latency(T: CostTable) -> int:
    """Largest total latency over all partitions of (0, L) into table blocks."""
    best = {0: 0}
    for l in range(1, T.L + 1):
        cands = [best[k] + v for (k, j), v in T.entries.items() if j == l and k in best]
        if cands:
            best[l] = max(cands)
    return int(best[T.L])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_segment_net(rng) -> NetworkSpec:
    """One mergeable segment: 1-4 layers mixing dense, depthwise and 1x1 convs, strides 1-2,
    optional batch norm and bias, identity activations, and skips wherever shapes allow."""
    from depthmerge.network import BatchNormParams, SkipConnection

    n = int(rng.integers(1, 5))
    size = int(rng.integers(5, 17))
    cin = c0 = int(rng.choice([2, 3]))
    layers, strides, chans = [], [], [c0]
    for _ in range(n):
        kind = str(rng.choice(["dense", "depthwise", "pointwise"]))
        K = 1 if kind == "pointwise" else int(rng.choice([1, 3, 5]))
        stride = 2 if rng.random() < 0.3 else 1
        cout = cin if kind == "depthwise" or rng.random() < 0.6 else int(rng.choice([2, 3, 4]))
        groups = cin if kind == "depthwise" else 1
        bn = BatchNormParams.identity(cout) if rng.random() < 0.5 else None
        layers.append(ConvLayer(cin, cout, K, stride, (K - 1) // 2, groups, bool(rng.random() < 0.3), bn))
        strides.append(stride)
        chans.append(cout)
        cin = cout
    spans = [
        (s, e)
        for s in range(n)
        for e in range(s + 1, n + 1)
        if chans[s] == chans[e] and all(st == 1 for st in strides[s:e])
    ]
    skips = []
    for s, e in rng.permutation(spans).tolist() if spans else []:
        if rng.random() < 0.5 and not any(a < s < b < e or s < a < e < b or (a, b) == (s, e) for a, b in skips):
            skips.append((s, e))
    net = NetworkSpec(tuple(layers), tuple(SkipConnection(s, e) for s, e in skips), c0, size, size)
    return net
