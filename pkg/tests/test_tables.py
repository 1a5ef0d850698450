import math

import pytest

from conftest import chain_network
from depthmerge.errors import (
    EmptyReferenceSet,
    IndexOutOfRange,
    MaskViolation,
    NonFiniteValue,
    Overflow,
    ParseError,
)
from depthmerge.fixtures import toy5
from depthmerge.network import ConvLayer, NetworkSpec
from depthmerge.tables import (
    CostTable,
    ImportanceTable,
    LatencyModelParams,
    block_macs,
    discretize,
    edge_bits_allowed,
    feasible_importance_blocks,
    feasible_latency_blocks,
    load_cost_table,
    load_importance_table,
    ms_to_ticks,
    normalize_importance,
    save_cost_table,
    save_importance_table,
    size_one_scores,
    synthesize_importance,
    synthesize_latency,
)


def _strided_net():
    layers = [
        ConvLayer(4, 4, 3, 1, 1),
        ConvLayer(4, 4, 3, 2, 1),
        ConvLayer(4, 4, 1),
        ConvLayer(4, 4, 3, 1, 1),
    ]
    return NetworkSpec(tuple(layers), (), 4, 16, 16)


# -- feasibility ----------------------------------------------------------------------

def test_wide_kernel_after_stride_is_not_mergeable():
    net = _strided_net()
    blocks = feasible_latency_blocks(net)
    assert (1, 3) in blocks and (0, 3) in blocks and (2, 4) in blocks
    assert (1, 4) not in blocks and (0, 4) not in blocks
    assert len(blocks) == 8
    assert len(feasible_latency_blocks(net, forbid_wide_after_stride=False)) == 10


def test_straddling_blocks_are_excluded():
    from depthmerge.fixtures import irb_small

    net = irb_small()  # skip (1, 4)
    blocks = feasible_latency_blocks(net, forbid_wide_after_stride=False)
    assert (1, 4) in blocks and (0, 4) in blocks and (2, 3) in blocks
    assert (2, 5) not in blocks and (0, 2) not in blocks and (0, 1) in blocks


def test_edge_bits_at_network_ends_and_real_activations():
    net = chain_network(["relu", "id", "id"])
    assert not edge_bits_allowed(net, 0, 1, 1, 1)
    assert not edge_bits_allowed(net, 0, 1, 0, 0)
    assert edge_bits_allowed(net, 0, 1, 0, 1)
    assert not edge_bits_allowed(net, 1, 2, 0, 1)
    assert edge_bits_allowed(net, 1, 2, 1, 0)
    assert not edge_bits_allowed(net, 2, 3, 0, 1)
    assert edge_bits_allowed(net, 2, 3, 0, 0) and edge_bits_allowed(net, 2, 3, 1, 0)


def test_identity_at_both_interior_edges_needs_active_end():
    net = chain_network(["id", "id", "id", "id"])
    assert not edge_bits_allowed(net, 1, 2, 0, 0)
    assert not edge_bits_allowed(net, 1, 2, 1, 0)
    assert edge_bits_allowed(net, 1, 2, 0, 1)
    assert edge_bits_allowed(net, 0, 2, 0, 0)


def test_importance_blocks_expand_latency_blocks():
    net = chain_network(["relu", "id", "id"])
    keys = feasible_importance_blocks(net, [(0, 1), (1, 2), (2, 3)])
    assert keys == {(0, 1, 0, 1), (1, 2, 1, 0), (1, 2, 1, 1), (2, 3, 0, 0), (2, 3, 1, 0)}


# -- synthesis ------------------------------------------------------------------------------

def test_synthetic_latency_counts_macs():
    net = toy5()
    T = synthesize_latency(net, [(0, 1), (0, 2)], LatencyModelParams(mac_cost=1e-6, layer_overhead=0.5))
    assert block_macs(net, 0, 1) == 12 * 12 * 3 * 4 * 9
    assert block_macs(net, 0, 2) == 12 * 12 * 3 * 4 * 25
    assert T.get(0, 1) == pytest.approx(0.5 + 1e-6 * 15552)
    assert T.get(0, 2) == pytest.approx(0.5 + 1e-6 * 43200)


def test_latency_model_rejects_all_zero():
    with pytest.raises(ValueError):
        LatencyModelParams(0.0, 0.0)


def test_synthetic_importance_is_seeded_and_dyadic():
    net = _strided_net()
    blocks = feasible_latency_blocks(net)
    a = synthesize_importance(net, blocks, seed=3)
    b = synthesize_importance(net, blocks, seed=3)
    c = synthesize_importance(net, blocks, seed=4)
    assert a.entries == b.entries and a.entries != c.entries
    assert all((v * 1024).is_integer() and -1 <= v <= 1 for v in a.entries.values())


def test_normalisation_shifts_by_mean_of_references():
    I = ImportanceTable(2, {(0, 1): 0.5, (1, 2): -0.25, (0, 2): 1.0})
    assert size_one_scores(I) == [0.5, -0.25]
    shifted = normalize_importance(I, 2.0, size_one_scores(I))
    assert shifted.entries == {(0, 1): 0.25, (1, 2): -0.5, (0, 2): 0.75}
    assert normalize_importance(I, 0.0, [1.0]) is I
    with pytest.raises(EmptyReferenceSet):
        normalize_importance(I, 1.0, [])


# -- discretisation ----------------------------------------------------------------------

@pytest.mark.parametrize(
    "ms, scale, ticks",
    [(0.125, 100, 13), (0.005, 100, 1), (0.004, 100, 0), (2.675, 100, 268), (1.0, 1, 1), (0.33, 1000, 330)],
)
def test_ticks_round_half_up_on_written_value(ms, scale, ticks):
    assert ms_to_ticks(ms, scale) == ticks


def test_discretize_table_and_budget():
    T = CostTable(2, {(0, 1): 0.125, (1, 2): 0.2, (0, 2): 0.3})
    D, budget = discretize(T, 0.5, 100)
    assert D.entries == {(0, 1): 13, (1, 2): 20, (0, 2): 30} and budget == 50 and D.scale == 100
    with pytest.raises(ValueError):
        discretize(D, 0.5)
    with pytest.raises(ValueError):
        discretize(T, 0.5, 0)


def test_discretize_overflow():
    with pytest.raises(Overflow):
        ms_to_ticks(1e17, 100)


# -- CSV I/O -----------------------------------------------------------------------------

def test_cost_table_round_trip(tmp_path):
    T = CostTable(3, {(0, 1): 0.1, (1, 2): 0.2, (2, 3): 1 / 3, (0, 3): 2.5})
    save_cost_table(T, tmp_path / "t.csv")
    assert load_cost_table(tmp_path / "t.csv", 3).entries == T.entries


def test_importance_round_trip_both_modes(tmp_path):
    base = ImportanceTable(2, {(0, 1): -0.5, (0, 2): 0.1})
    save_importance_table(base, tmp_path / "b.csv")
    assert load_importance_table(tmp_path / "b.csv", 2) == base
    net = chain_network(["relu", "id"])
    ext = ImportanceTable(2, {(0, 1, 0, 1): 0.5, (1, 2, 1, 0): 0.25}, "extended")
    save_importance_table(ext, tmp_path / "e.csv")
    assert load_importance_table(tmp_path / "e.csv", 2, net) == ext


@pytest.mark.parametrize(
    "text, error",
    [
        ("a,b,c\n0,1,1.0\n", ParseError),
        ("i,j,ms\n0,1,abc\n", ParseError),
        ("i,j,ms\n0,1,1.0\n0,1,2.0\n", ParseError),
        ("i,j,ms\n0,5,1.0\n", IndexOutOfRange),
        ("i,j,ms\n1,1,1.0\n", IndexOutOfRange),
        ("i,j,ms\n0,1,nan\n", NonFiniteValue),
        ("i,j,ms\n0,1,0\n", NonFiniteValue),
        ("i,j,ms\n0,1,-2\n", NonFiniteValue),
    ],
)
def test_bad_cost_csv(tmp_path, text, error):
    path = tmp_path / "t.csv"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(error):
        load_cost_table(path, 2)


def test_importance_mask_violation(tmp_path):
    net = chain_network(["relu", "id"])
    path = tmp_path / "e.csv"
    path.write_text("i,j,a,b,score\n0,1,0,0,0.5\n", encoding="utf-8")
    with pytest.raises(MaskViolation):
        load_importance_table(path, 2, net)
    path.write_text("i,j,a,b,score\n0,1,2,0,0.5\n", encoding="utf-8")
    with pytest.raises(IndexOutOfRange):
        load_importance_table(path, 2, net)
    path.write_text("i,j,score\n0,1,inf\n", encoding="utf-8")
    with pytest.raises(NonFiniteValue):
        load_importance_table(path, 2)


def test_table_constructors_validate():
    with pytest.raises(IndexOutOfRange):
        CostTable(2, {(1, 0): 1.0})
    with pytest.raises(NonFiniteValue):
        CostTable(2, {(0, 1): math.inf})
    with pytest.raises(ValueError):
        ImportanceTable(2, {}, "other")
