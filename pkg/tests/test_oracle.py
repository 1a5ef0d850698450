import numpy as np
import pytest

from conftest import max_partition_latency, random_base_importance, random_cost_table, random_extended_instance
from depthmerge.dp import optimal_latency, solve_base, solve_base_state
from depthmerge.errors import InfeasibleBudget, InstanceTooLarge
from depthmerge.fixtures import step_tables
from depthmerge.oracle import (
    brute_force_base,
    brute_force_base_objectives,
    brute_force_extended,
    fastest_superset,
)
from depthmerge.tables import CostTable, ImportanceTable


def test_single_layer_keeps_nothing():
    T = CostTable(1, {(0, 1): 3}, scale=1)
    I = ImportanceTable(1, {(0, 1): 0.5})
    plan = brute_force_base(T, I, 4)
    assert plan.A == () and plan.S == () and plan.importance == 0.5


def test_two_layers_agree_with_solver_on_every_budget():
    T = CostTable(2, {(0, 1): 3, (1, 2): 4, (0, 2): 5}, scale=1)
    I = ImportanceTable(2, {(0, 1): 0.25, (1, 2): 0.5, (0, 2): 0.5})
    for t in range(1, 3 + 4 + 2):
        try:
            expected = brute_force_base(T, I, t)
        except InfeasibleBudget:
            with pytest.raises(InfeasibleBudget):
                solve_base(T, I, t)
            continue
        assert solve_base(T, I, t).importance == expected.importance
    # keeping the activation needs 3 + 4 < t
    assert brute_force_base(T, I, 7).A == ()
    assert brute_force_base(T, I, 8).A == (1,)


def test_strict_budget_in_both_solvers():
    T, I = step_tables()
    for solver in (brute_force_base, solve_base):
        with pytest.raises(InfeasibleBudget):
            solver(T, I, 20)


def test_size_guard():
    L = 21
    T = CostTable(L, {(i, i + 1): 1 for i in range(L)}, scale=1)
    I = ImportanceTable(L, {(i, i + 1): 0.0 for i in range(L)})
    with pytest.raises(InstanceTooLarge):
        brute_force_base(T, I, 100)


def test_ties_prefer_fewer_kept_activations():
    T = CostTable(3, {(0, 1): 1, (1, 2): 1, (2, 3): 1, (0, 3): 1, (0, 2): 1, (1, 3): 1}, scale=1)
    I = ImportanceTable(3, {k: 0.0 for k in T.entries})
    plan = brute_force_base(T, I, 100)
    assert plan.A == () and plan.S == ()


def test_fastest_superset_is_lexicographic_on_ties():
    T = CostTable(3, {(0, 1): 2, (1, 2): 3, (2, 3): 4, (0, 2): 4, (1, 3): 6, (0, 3): 9}, scale=1)
    assert fastest_superset(T, ()) == (8, (1,))
    assert fastest_superset(T, (2,)) == (8, (2,))


@pytest.mark.parametrize("seed", range(15))
def test_objectives_over_all_budgets(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 7))
    T, I = random_cost_table(rng, L), random_base_importance(rng, L)
    hi = max_partition_latency(T) + 1
    state = solve_base_state(T, I, hi)
    expected = brute_force_base_objectives(T, I, range(1, hi + 1))
    for t in range(1, hi + 1):
        assert state.value(L, t) == expected[t]


@pytest.mark.parametrize("seed", range(10))
def test_extended_oracle_plan_is_consistent(seed):
    rng = np.random.default_rng(seed)
    net, T, I = random_extended_instance(rng, int(rng.integers(2, 6)))
    t0 = optimal_latency(T).value(0, T.L) + 10
    try:
        plan = brute_force_extended(T, I, net, t0)
    except InfeasibleBudget:
        return
    plan.validate(net)
    assert plan.latency_ticks < t0
