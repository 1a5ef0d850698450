"""Latency and importance tables: feasibility, synthesis, CSV I/O, normalisation, ticks.

A latency key ``(i, j)`` names the single convolution equivalent to layers
i+1..j.  Importance keys are ``(i, j)`` in base mode and ``(i, j, a, b)`` in
extended mode, where ``a``/``b`` say whether the activation at boundary i/j is
non-identity.  Missing keys mean "infeasible" (+inf latency, -inf importance).

Edge convention for extended tables: the network input (boundary 0) and
output (boundary L) carry no activation, so their bit is always 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EmptyReferenceSet,
    IndexOutOfRange,
    MaskViolation,
    NonFiniteValue,
    Overflow,
    ParseError,
)
from .merge import merged_shape
from .network import NetworkSpec, shape_trace

MAX_TICKS = 2**63 - 1


@dataclass(frozen=True)
class CostTable:
    """T[i, j]; ``scale`` is None for milliseconds, else ticks per millisecond."""

    L: int
    entries: Mapping[tuple[int, int], float]
    scale: int | None = None

    def __post_init__(self):
        for (i, j), v in self.entries.items():
            if not 0 <= i < j <= self.L:
                raise IndexOutOfRange((i, j), self.L)
            if not math.isfinite(v) or v < 0 or (self.scale is None and v == 0):
                raise NonFiniteValue((i, j))

    def get(self, i: int, j: int):
        return self.entries.get((i, j))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def discretized(self) -> bool:
        return self.scale is not None


@dataclass(frozen=True)
class ImportanceTable:
    L: int
    entries: Mapping[tuple, float]
    mode: str = "base"

    def __post_init__(self):
        width = 2 if self.mode == "base" else 4
        if self.mode not in ("base", "extended"):
            raise ValueError(f"unknown importance mode {self.mode!r}")
        for key, v in self.entries.items():
            if len(key) != width or not 0 <= key[0] < key[1] <= self.L:
                raise IndexOutOfRange(key, self.L)
            if width == 4 and not {key[2], key[3]} <= {0, 1}:
                raise IndexOutOfRange(key, self.L)
            if not math.isfinite(v):
                raise NonFiniteValue(key)

    def get(self, *key):
        return self.entries.get(tuple(key))

    def __len__(self) -> int:
        return len(self.entries)

    def map_values(self, fn) -> "ImportanceTable":
        return ImportanceTable(self.L, {k: fn(v) for k, v in self.entries.items()}, self.mode)


@dataclass(frozen=True)
class LatencyModelParams:
    mac_cost: float = 1e-8
    layer_overhead: float = 0.01

    def __post_init__(self):
        if self.mac_cost < 0 or self.layer_overhead < 0:
            raise ValueError("latency model parameters must be non-negative")
        if self.mac_cost == 0 and self.layer_overhead == 0:
            raise ValueError("latency model needs a positive MAC cost or layer overhead")


# -- feasibility ------------------------------------------------------------------

def feasible_latency_blocks(net: NetworkSpec, forbid_wide_after_stride: bool = True) -> set[tuple[int, int]]:
    """Blocks (i, j) whose layers can be merged into one convolution."""
    L = net.L
    blocks = set()
    for i in range(L):
        for j in range(i + 1, L + 1):
            if j == i + 1:
                blocks.add((i, j))
                continue
            if any(s.straddles(i, j) for s in net.skips):
                continue
            if forbid_wide_after_stride and _wide_after_stride(net, i, j):
                continue
            blocks.add((i, j))
    return blocks


def _wide_after_stride(net: NetworkSpec, i: int, j: int) -> bool:
    strided = False
    for l in range(i + 1, j + 1):
        layer = net.layer(l)
        if strided and layer.kernel_size > 1:
            return True
        strided = strided or layer.stride >= 2
    return False


def edge_bits_allowed(net: NetworkSpec, i: int, j: int, a: int, b: int) -> bool:
    """Masking rules on the edge-activation bits of an importance block."""
    if i == 0 and a == 1:
        return False
    if j == net.L and b == 1:
        return False
    sigma_i, sigma_j = net.activation(i), net.activation(j)
    if a == 0 and not sigma_i.is_identity:
        return False
    if b == 0 and not sigma_j.is_identity:
        return False
    # blocks with identity at both interior edges and the end left inactive
    if b == 0 and 0 < i and j < net.L and sigma_i.is_identity and sigma_j.is_identity:
        return False
    return True


def feasible_importance_blocks(net: NetworkSpec, blocks: Iterable[tuple[int, int]]) -> set[tuple[int, int, int, int]]:
    return {
        (i, j, a, b)
        for i, j in blocks
        for a in (0, 1)
        for b in (0, 1)
        if edge_bits_allowed(net, i, j, a, b)
    }


# -- synthesis --------------------------------------------------------------------

def block_macs(net: NetworkSpec, i: int, j: int, shapes=None) -> int:
    shapes = shapes or shape_trace(net)
    m = merged_shape(net, i, j)
    _, h, w = shapes[j]
    return h * w * (m.in_channels // m.groups) * m.out_channels * m.kernel_size**2


def synthesize_latency(
    net: NetworkSpec, blocks: Iterable[tuple[int, int]], params: LatencyModelParams = LatencyModelParams()
) -> CostTable:
    """MAC-count latency model: overhead + mac_cost * MACs of the merged layer."""
    shapes = shape_trace(net)
    entries = {
        (i, j): params.layer_overhead + params.mac_cost * block_macs(net, i, j, shapes) for i, j in sorted(blocks)
    }
    return CostTable(net.L, entries)


def synthesize_importance(
    net: NetworkSpec, blocks: Iterable[tuple[int, int]], seed: int = 0, mode: str = "base"
) -> ImportanceTable:
    """Seeded stand-in scores in [-1, 1] on a 1/1024 grid, so sums stay exact in binary floating point."""
    rng = np.random.default_rng(seed)
    if mode == "base":
        keys = sorted(blocks)
    else:
        keys = sorted(feasible_importance_blocks(net, blocks))
    values = rng.integers(-1024, 1025, size=len(keys)) / 1024.0
    return ImportanceTable(net.L, dict(zip(keys, values.tolist())), mode)


def size_one_scores(tbl: ImportanceTable) -> list[float]:
    """Scores of all single-layer blocks, the reference set for normalisation."""
    return [v for k, v in sorted(tbl.entries.items()) if k[1] - k[0] == 1]


def normalize_importance(tbl: ImportanceTable, alpha: float, size_one_drops) -> ImportanceTable:
    """Shift every score by -alpha * mean(size_one_drops)."""
    drops = list(size_one_drops)
    if not drops:
        raise EmptyReferenceSet("normalisation needs at least one size-one block score")
    if alpha == 0:
        return tbl
    shift = alpha * (sum(drops) / len(drops))
    return tbl.map_values(lambda v: v - shift)


def ms_to_ticks(ms: float, scale: int) -> int:
    """Round half away from zero, on the decimal value as written."""
    ticks = (Decimal(repr(float(ms))) * scale).to_integral_value(rounding=ROUND_HALF_UP)
    if abs(ticks) > MAX_TICKS:
        raise Overflow(f"{ms} ms at scale {scale} exceeds the tick range")
    return int(ticks)


def discretize(tbl: CostTable, budget_ms: float, scale: int = 100) -> tuple[CostTable, int]:
    if scale < 1 or int(scale) != scale:
        raise ValueError("scale must be a positive integer")
    if tbl.discretized:
        raise ValueError("table is already discretized")
    entries = {k: ms_to_ticks(v, scale) for k, v in tbl.entries.items()}
    return CostTable(tbl.L, entries, int(scale)), ms_to_ticks(budget_ms, scale)


# -- CSV I/O ----------------------------------------------------------------------

def _rows(path, required: list[str]):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip() for h in (reader.fieldnames or [])]
            if not set(required) <= set(header):
                raise ParseError(f"{path}: header {header} lacks {required}")
            reader.fieldnames = header
            for lineno, row in enumerate(reader, start=2):
                yield lineno, row
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8") from exc


def _num(row, key, lineno, cast):
    try:
        return cast(row[key].strip())
    except (ValueError, AttributeError) as exc:
        raise ParseError(f"line {lineno}: bad {key!r} value {row.get(key)!r}") from exc


def save_cost_table(tbl: CostTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "ms"])
        for (i, j), v in sorted(tbl.entries.items()):
            w.writerow([i, j, repr(float(v))])


def load_cost_table(path, L: int) -> CostTable:
    entries = {}
    for lineno, row in _rows(path, ["i", "j", "ms"]):
        i, j = _num(row, "i", lineno, int), _num(row, "j", lineno, int)
        v = _num(row, "ms", lineno, float)
        if not 0 <= i < j <= L:
            raise IndexOutOfRange((i, j), L)
        if not math.isfinite(v) or v <= 0:
            raise NonFiniteValue((i, j))
        if (i, j) in entries:
            raise ParseError(f"line {lineno}: duplicate entry {(i, j)}")
        entries[(i, j)] = v
    return CostTable(L, entries)


def save_importance_table(tbl: ImportanceTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "score"] if tbl.mode == "base" else ["i", "j", "a", "b", "score"])
        for key, v in sorted(tbl.entries.items()):
            w.writerow([*key, repr(float(v))])


def load_importance_table(path, L: int, net: NetworkSpec | None = None) -> ImportanceTable:
    """Read ``i,j,a,b,score`` (extended) or ``i,j,score`` (base) rows, checking masks against ``net``."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
    header = [h.strip() for h in first.strip().split(",")]
    extended = "a" in header and "b" in header
    required = ["i", "j", "a", "b", "score"] if extended else ["i", "j", "score"]
    entries = {}
    for lineno, row in _rows(path, required):
        key = tuple(_num(row, k, lineno, int) for k in required[:-1])
        v = _num(row, "score", lineno, float)
        i, j = key[0], key[1]
        if not 0 <= i < j <= L or (extended and not {key[2], key[3]} <= {0, 1}):
            raise IndexOutOfRange(key, L)
        if not math.isfinite(v):
            raise NonFiniteValue(key)
        if extended and net is not None and not edge_bits_allowed(net, *key):
            raise MaskViolation(key)
        if key in entries:
            raise ParseError(f"line {lineno}: duplicate entry {key}")
        entries[key] = v
    return ImportanceTable(L, entries, "extended" if extended else "base")
