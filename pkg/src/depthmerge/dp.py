"""Exact dynamic programs for choosing kept activations (A) and merge cuts (S).

Latencies are integer ticks.  Infeasible states are tracked by explicit
boolean masks next to the value arrays rather than by float infinities, so
tick arithmetic never touches score arithmetic.

The score tables are dense over budgets 0..T0.  Kept sets are not copied per
state: each state stores its argmax predecessor and sets are rebuilt by
walking back from the queried state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleBudget, NoFeasiblePartition
from .network import NetworkSpec
from .plan import Plan
from .tables import CostTable, ImportanceTable


def _require_ticks(T: CostTable) -> None:
    if not all(float(v).is_integer() for v in T.entries.values()):
        raise ValueError("latency table must be discretized to integer ticks")


def merge_latency_of(T: CostTable, cuts, k: int, l: int):
    """Sum of T over the blocks between consecutive points of {k} | cuts | {l}; None if any is absent."""
    points = [k, *sorted(cuts), l]
    total = 0
    for a, b in zip(points, points[1:]):
        v = T.get(a, b)
        if v is None:
            return None
        total += v
    return total


def importance_of(I: ImportanceTable, kept, k: int, l: int):
    """Base surrogate: sum of I over the blocks cut at the kept activations; None if any is masked."""
    points = [k, *sorted(kept), l]
    total = 0.0
    for a, b in zip(points, points[1:]):
        v = I.get(a, b)
        if v is None:
            return None
        total += v
    return total


def extended_importance_of(I: ImportanceTable, A, B, L: int, first_bit: int = 0, last_bit: int = 0):
    """Extended surrogate over the B-blocks, edge bits set by membership in A."""
    A = set(A)
    points = [0, *sorted(B), L]

    def bit(p):
        if p == 0:
            return first_bit
        if p == L:
            return last_bit
        return int(p in A)

    total = 0.0
    for a, b in zip(points, points[1:]):
        v = I.get(a, b, bit(a), bit(b))
        if v is None:
            return None
        total += v
    return total


# -- optimal latency per block -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LatencyDP:
    """T_opt[k, l] and the cut set achieving it, for every 0 <= k <= l <= L."""

    L: int
    t_opt: np.ndarray
    reachable: np.ndarray
    split: np.ndarray

    def value(self, k: int, l: int):
        return int(self.t_opt[k, l]) if self.reachable[k, l] else None

    def cuts(self, k: int, l: int) -> tuple[int, ...]:
        if not self.reachable[k, l]:
            raise NoFeasiblePartition((k, l))
        out = []
        while l > k:
            m = int(self.split[k, l])
            if m == k:
                break
            out.append(m)
            l = m
        return tuple(reversed(out))


def optimal_latency(T: CostTable) -> LatencyDP:
    """Fastest partition of every block: T_opt[k,l] = min_m T_opt[k,m] + T[m,l]; ties to smaller m."""
    _require_ticks(T)
    L = T.L
    t_opt = np.zeros((L + 1, L + 1), dtype=np.int64)
    reachable = np.zeros((L + 1, L + 1), dtype=bool)
    split = np.full((L + 1, L + 1), -1, dtype=np.int64)
    np.fill_diagonal(reachable, True)
    into = [[] for _ in range(L + 1)]
    for (m, l), v in sorted(T.entries.items()):
        into[l].append((m, int(v)))
    for l in range(1, L + 1):
        for k in range(l):
            best = arg = None
            for m, v in into[l]:
                if m < k or not reachable[k, m]:
                    continue
                cand = int(t_opt[k, m]) + v
                if best is None or cand < best:
                    best, arg = cand, m
            if best is not None:
                t_opt[k, l], split[k, l], reachable[k, l] = best, arg, True
    if not reachable[0, L]:
        raise NoFeasiblePartition((0, L))
    return LatencyDP(L, t_opt, reachable, split)


# -- base surrogate ----------------------------------------------------------------------

def relax_base(l: int, t, lat: LatencyDP, I: ImportanceTable, score: np.ndarray, ok: np.ndarray):
    """One recurrence step: best predecessor k for D[l, t] at every budget in ``t``.

    A predecessor is usable when D[k, t - T_opt[k, l]] is feasible, which is
    the latency constraint T_opt[0,k] + T_opt[k,l] < t.  Returns
    (argmax k, best score, feasible) arrays; ties go to the smaller k.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    best = np.zeros(t.shape)
    found = np.zeros(t.shape, dtype=bool)
    arg = np.full(t.shape, -1, dtype=np.int64)
    for k in range(l):
        gain = I.get(k, l)
        if gain is None or not lat.reachable[k, l]:
            continue
        prev = t - lat.t_opt[k, l]
        valid = prev >= 0
        prev = np.where(valid, prev, 0)
        usable = valid & ok[k, prev]
        cand = score[k, prev] + gain
        better = usable & (~found | (cand > best))
        best = np.where(better, cand, best)
        arg = np.where(better, k, arg)
        found |= better
    return arg, best, found


@dataclass(frozen=True, eq=False)
class BaseSolution:
    """Dense solver state D[l, t] with predecessor links, 0 <= t <= budget."""

    T: CostTable
    I: ImportanceTable
    lat: LatencyDP
    score: np.ndarray
    ok: np.ndarray
    choice: np.ndarray

    @property
    def budget(self) -> int:
        return self.score.shape[1] - 1

    def value(self, l: int, t: int):
        return float(self.score[l, t]) if self.ok[l, t] else None

    def sets(self, l: int, t: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """(A[l, t], S[l, t]) rebuilt from predecessor links."""
        if not self.ok[l, t]:
            raise InfeasibleBudget(t, self.lat.value(0, l))
        A, S = [], []
        while l > 0:
            k = int(self.choice[l, t])
            S.extend(self.lat.cuts(k, l))
            if k > 0:
                A.append(k)
                S.append(k)
            t -= int(self.lat.t_opt[k, l])
            l = k
        return tuple(sorted(A)), tuple(sorted(S))

    def plan(self, t: int | None = None) -> Plan:
        t = self.budget if t is None else t
        L = self.lat.L
        if not self.ok[L, t]:
            raise InfeasibleBudget(t, self.lat.value(0, L))
        A, S = self.sets(L, t)
        return Plan(
            L=L,
            A=A,
            S=S,
            B=A,
            latency_ticks=int(merge_latency_of(self.T, S, 0, L)),
            importance=float(self.score[L, t]),
            budget_ticks=t,
            scale=self.T.scale or 1,
            mode="base",
        )


def solve_base_state(T: CostTable, I: ImportanceTable, T0: int, lat: LatencyDP | None = None) -> BaseSolution:
    if I.mode != "base":
        raise ValueError("solve_base needs a base-mode importance table")
    if I.L != T.L:
        raise ValueError(f"tables disagree on L: {T.L} vs {I.L}")
    lat = lat or optimal_latency(T)
    L, T0 = T.L, int(T0)
    score = np.zeros((L + 1, T0 + 1))
    ok = np.zeros((L + 1, T0 + 1), dtype=bool)
    choice = np.full((L + 1, T0 + 1), -1, dtype=np.int64)
    ok[0, 1:] = True
    for l in range(1, L + 1):
        if not lat.reachable[0, l]:
            continue
        ts = np.arange(lat.t_opt[0, l] + 1, T0 + 1)
        if ts.size == 0:
            continue
        arg, best, found = relax_base(l, ts, lat, I, score, ok)
        score[l, ts] = np.where(found, best, 0.0)
        ok[l, ts] = found
        choice[l, ts] = arg
    return BaseSolution(T, I, lat, score, ok, choice)


def solve_base(T: CostTable, I: ImportanceTable, T0: int) -> Plan:
    """Kept activations and merge cuts maximising the summed importance with latency < T0."""
    lat = optimal_latency(T)
    if T0 <= lat.t_opt[0, T.L]:
        raise InfeasibleBudget(T0, int(lat.t_opt[0, T.L]))
    return solve_base_state(T, I, T0, lat).plan()


# -- extended surrogate -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExtImportanceDP:
    """Best importance of a block split at identity boundaries, per edge bits (a, b)."""

    L: int
    i_opt: np.ndarray
    ok: np.ndarray
    split: np.ndarray

    def value(self, k: int, l: int, a: int, b: int):
        return float(self.i_opt[k, l, a, b]) if self.ok[k, l, a, b] else None

    def boundaries(self, k: int, l: int, a: int, b: int) -> tuple[int, ...]:
        out = []
        while l > k:
            m = int(self.split[k, l, a, b])
            if m == k:
                break
            out.append(m)
            l, b = m, 0
        return tuple(reversed(out))


def optimal_importance(I: ImportanceTable, net: NetworkSpec | None = None) -> ExtImportanceDP:
    """I_opt[k,l,a,b] = max(I[k,l,a,b], max_{k<m<l} I_opt[k,m,a,0] + I[m,l,0,b]); ties to smaller m.

    Masks are enforced when the table is built or loaded, so ``net`` is only
    used for a consistency check.
    """
    if I.mode != "extended":
        raise ValueError("optimal_importance needs an extended importance table")
    if net is not None and net.L != I.L:
        raise ValueError(f"table is for L={I.L}, network has L={net.L}")
    L = I.L
    i_opt = np.zeros((L + 1, L + 1, 2, 2))
    ok = np.zeros((L + 1, L + 1, 2, 2), dtype=bool)
    split = np.full((L + 1, L + 1, 2, 2), -1, dtype=np.int64)
    for k in range(L + 1):
        ok[k, k] = True
    for l in range(1, L + 1):
        for k in range(l):
            for a in (0, 1):
                for b in (0, 1):
                    best = I.get(k, l, a, b)
                    arg = k if best is not None else -1
                    for m in range(k + 1, l):
                        tail = I.get(m, l, 0, b)
                        if tail is None or not ok[k, m, a, 0]:
                            continue
                        cand = i_opt[k, m, a, 0] + tail
                        if best is None or cand > best:
                            best, arg = cand, m
                    if best is not None:
                        i_opt[k, l, a, b], ok[k, l, a, b], split[k, l, a, b] = best, True, arg
    return ExtImportanceDP(L, i_opt, ok, split)


def relax_extended(l: int, a: int, t, lat: LatencyDP, iopt: ExtImportanceDP, score: np.ndarray, ok: np.ndarray):
    """Best (k, alpha) for D[l, t, a]; ties go to the smaller k, then alpha = 0."""
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    best = np.zeros(t.shape)
    found = np.zeros(t.shape, dtype=bool)
    arg_k = np.full(t.shape, -1, dtype=np.int64)
    arg_alpha = np.full(t.shape, -1, dtype=np.int64)
    for k in range(l):
        if not lat.reachable[k, l]:
            continue
        prev = t - lat.t_opt[k, l]
        valid = prev >= 0
        prev = np.where(valid, prev, 0)
        for alpha in (0, 1):
            if not iopt.ok[k, l, alpha, a]:
                continue
            usable = valid & ok[k, prev, alpha]
            cand = score[k, prev, alpha] + iopt.i_opt[k, l, alpha, a]
            better = usable & (~found | (cand > best))
            best = np.where(better, cand, best)
            arg_k = np.where(better, k, arg_k)
            arg_alpha = np.where(better, alpha, arg_alpha)
            found |= better
    return arg_k, arg_alpha, best, found


@dataclass(frozen=True, eq=False)
class ExtendedSolution:
    T: CostTable
    I: ImportanceTable
    lat: LatencyDP
    iopt: ExtImportanceDP
    score: np.ndarray
    ok: np.ndarray
    choice_k: np.ndarray
    choice_alpha: np.ndarray

    @property
    def budget(self) -> int:
        return self.score.shape[1] - 1

    def value(self, l: int, t: int):
        vals = [self.score[l, t, a] for a in (0, 1) if self.ok[l, t, a]]
        return float(max(vals)) if vals else None

    def last_bit(self, t: int) -> int:
        """Edge bit at the output maximising D[L, t, a]; ties to 0."""
        L = self.lat.L
        cands = [a for a in (0, 1) if self.ok[L, t, a]]
        if not cands:
            raise InfeasibleBudget(t, self.lat.value(0, L))
        return max(cands, key=lambda a: (self.score[L, t, a], -a))

    def sets(self, l: int, t: int, a: int):
        """(A, S, B) rebuilt from predecessor links, plus the edge bit at boundary 0."""
        A, S, B = [], [], []
        while l > 0:
            k, alpha = int(self.choice_k[l, t, a]), int(self.choice_alpha[l, t, a])
            S.extend(self.lat.cuts(k, l))
            B.extend(self.iopt.boundaries(k, l, alpha, a))
            if k > 0:
                S.append(k)
                B.append(k)
                if alpha == 1:
                    A.append(k)
            t -= int(self.lat.t_opt[k, l])
            l, a = k, alpha
        return tuple(sorted(A)), tuple(sorted(S)), tuple(sorted(B)), a

    def plan(self, t: int | None = None) -> Plan:
        t = self.budget if t is None else t
        L = self.lat.L
        a = self.last_bit(t)
        A, S, B, _ = self.sets(L, t, a)
        return Plan(
            L=L,
            A=A,
            S=S,
            B=B,
            latency_ticks=int(merge_latency_of(self.T, S, 0, L)),
            importance=float(self.score[L, t, a]),
            budget_ticks=t,
            scale=self.T.scale or 1,
            mode="extended",
        )


def solve_extended_state(
    T: CostTable, I: ImportanceTable, net: NetworkSpec | None, T0: int, lat: LatencyDP | None = None
) -> ExtendedSolution:
    if I.L != T.L:
        raise ValueError(f"tables disagree on L: {T.L} vs {I.L}")
    lat = lat or optimal_latency(T)
    iopt = optimal_importance(I, net)
    L, T0 = T.L, int(T0)
    score = np.zeros((L + 1, T0 + 1, 2))
    ok = np.zeros((L + 1, T0 + 1, 2), dtype=bool)
    choice_k = np.full((L + 1, T0 + 1, 2), -1, dtype=np.int64)
    choice_alpha = np.full((L + 1, T0 + 1, 2), -1, dtype=np.int64)
    ok[0, 1:, :] = True
    for l in range(1, L + 1):
        if not lat.reachable[0, l]:
            continue
        ts = np.arange(lat.t_opt[0, l] + 1, T0 + 1)
        if ts.size == 0:
            continue
        for a in (0, 1):
            k, alpha, best, found = relax_extended(l, a, ts, lat, iopt, score, ok)
            score[l, ts, a] = np.where(found, best, 0.0)
            ok[l, ts, a] = found
            choice_k[l, ts, a] = k
            choice_alpha[l, ts, a] = alpha
    return ExtendedSolution(T, I, lat, iopt, score, ok, choice_k, choice_alpha)


def solve_extended(T: CostTable, I: ImportanceTable, net: NetworkSpec | None, T0: int) -> Plan:
    """Extended surrogate: importance blocks may end at identity boundaries (B \\ A)."""
    lat = optimal_latency(T)
    if T0 <= lat.t_opt[0, T.L]:
        raise InfeasibleBudget(T0, int(lat.t_opt[0, T.L]))
    return solve_extended_state(T, I, net, T0, lat).plan()
