"""Exhaustive reference solvers for small instances.

Every candidate set is enumerated and scored directly from the tables, with
no shared substructure, so agreement with the DP solvers is a meaningful check.
Ties go to the smaller |A|, then lexicographically smaller A, then S (then B).
"""

from __future__ import annotations

from itertools import combinations

from .dp import extended_importance_of, importance_of, merge_latency_of
from .errors import InfeasibleBudget, InstanceTooLarge
from .network import NetworkSpec
from .plan import Plan
from .tables import CostTable, ImportanceTable

MAX_ORACLE_L = 20


def _subsets(items):
    """All subsets in (size, lexicographic) order."""
    items = tuple(items)
    for r in range(len(items) + 1):
        yield from combinations(items, r)


def _guard(T: CostTable, I: ImportanceTable) -> None:
    if T.L > MAX_ORACLE_L:
        raise InstanceTooLarge(f"brute force is limited to L <= {MAX_ORACLE_L}, got {T.L}")
    if I.L != T.L:
        raise ValueError(f"tables disagree on L: {T.L} vs {I.L}")


def fastest_superset(T: CostTable, A) -> tuple[int, tuple[int, ...]] | None:
    """(latency, S) minimising merge latency over A <= S <= [L-1]; lexicographically smallest S on ties."""
    L = T.L
    free = [p for p in range(1, L) if p not in set(A)]
    best = None
    for extra in _subsets(free):
        S = tuple(sorted((*A, *extra)))
        lat = merge_latency_of(T, S, 0, L)
        if lat is None:
            continue
        if best is None or (lat, S) < best:
            best = (lat, S)
    return best


def minimum_latency(T: CostTable) -> int:
    found = fastest_superset(T, ())
    return found[0]


def _base_candidates(T: CostTable, I: ImportanceTable):
    """(A, score, latency, S) for every A with a finite score, in tie-break order."""
    out = []
    for A in _subsets(range(1, T.L)):
        score = importance_of(I, A, 0, T.L)
        if score is None:
            continue
        fast = fastest_superset(T, A)
        if fast is not None:
            out.append((A, score, *fast))
    return out


def _pick(cands, T0):
    best = None
    for cand in cands:
        if cand[2] < T0 and (best is None or cand[1] > best[1]):
            best = cand
    return best


def brute_force_base(T: CostTable, I: ImportanceTable, T0: int) -> Plan:
    _guard(T, I)
    best = _pick(_base_candidates(T, I), T0)
    if best is None:
        raise InfeasibleBudget(T0, minimum_latency(T))
    A, score, lat, S = best
    return Plan(T.L, A, S, A, int(lat), float(score), int(T0), T.scale or 1, "base")


def brute_force_base_objectives(T: CostTable, I: ImportanceTable, budgets) -> dict[int, float | None]:
    """Optimal base objective for many budgets from one enumeration; None where infeasible."""
    _guard(T, I)
    cands = _base_candidates(T, I)
    out = {}
    for t in budgets:
        best = _pick(cands, t)
        out[t] = None if best is None else best[1]
    return out


def _extended_candidates(T: CostTable, I: ImportanceTable):
    """(A, score, latency, S, B) over every A <= B <= [L-1] and both end bits."""
    L = T.L
    fast_cache = {}
    out = []
    for B in _subsets(range(1, L)):
        for A in _subsets(B):
            scores = [
                s
                for e0 in (0, 1)
                for eL in (0, 1)
                if (s := extended_importance_of(I, A, B, L, e0, eL)) is not None
            ]
            if not scores:
                continue
            if A not in fast_cache:
                fast_cache[A] = fastest_superset(T, A)
            fast = fast_cache[A]
            if fast is not None:
                out.append((A, max(scores), *fast, B))
    out.sort(key=lambda c: (len(c[0]), c[0], c[3], c[4]))
    return out


def brute_force_extended(T: CostTable, I: ImportanceTable, net: NetworkSpec | None, T0: int) -> Plan:
    _guard(T, I)
    if I.mode != "extended":
        raise ValueError("brute_force_extended needs an extended importance table")
    if net is not None and net.L != T.L:
        raise ValueError(f"tables are for L={T.L}, network has L={net.L}")
    best = _pick(_extended_candidates(T, I), T0)
    if best is None:
        raise InfeasibleBudget(T0, minimum_latency(T))
    A, score, lat, S, B = best
    return Plan(T.L, A, S, B, int(lat), float(score), int(T0), T.scale or 1, "extended")


def brute_force_extended_objectives(T: CostTable, I: ImportanceTable, budgets) -> dict[int, float | None]:
    _guard(T, I)
    cands = _extended_candidates(T, I)
    out = {}
    for t in budgets:
        best = _pick(cands, t)
        out[t] = None if best is None else best[1]
    return out
