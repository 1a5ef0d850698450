"""Command-line entry point: gen-tables, plan, apply, verify, oracle.

Exit codes: 0 ok, 1 input error, 2 infeasible budget, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dp import optimal_latency, solve_base, solve_extended
from .errors import DepthMergeError, InfeasibleBudget
from .execute import apply_plan, load_weights, prepare_reference, random_weights, save_weights, verify_equivalence
from .fixtures import NETWORK_FIXTURES, data_path
from .network import NetworkSpec, load_network, save_network
from .oracle import brute_force_base, brute_force_extended
from .plan import Plan, load_plan
from .tables import (
    CostTable,
    ImportanceTable,
    LatencyModelParams,
    discretize,
    feasible_importance_blocks,
    feasible_latency_blocks,
    load_cost_table,
    load_importance_table,
    normalize_importance,
    save_cost_table,
    save_importance_table,
    size_one_scores,
    synthesize_importance,
    synthesize_latency,
)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit 2 is reserved for infeasible budgets
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    network_path: str | None
    latency_path: str | None
    importance_path: str | None
    budget_ms: float
    scale: int = 100
    mode: str = "base"
    alpha: float = 0.0
    seed: int = 0
    forbid_wide_after_stride: bool = True
    mac_cost: float = 1e-8
    layer_overhead: float = 0.01

    def __post_init__(self):
        if not self.budget_ms > 0:
            raise InputError(f"budget must be positive, got {self.budget_ms} ms")
        if self.scale < 1:
            raise InputError(f"scale must be at least 1, got {self.scale}")
        if self.mode not in ("base", "extended"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.network_path is None and (self.latency_path is None or self.importance_path is None):
            raise InputError("without --network both --latency and --importance files are required")


def resolve_network(arg: str) -> NetworkSpec:
    """Load a network file, or a shipped fixture by name."""
    path = Path(arg)
    if not path.exists() and arg in NETWORK_FIXTURES:
        path = data_path(f"{arg}.json")
    if not path.exists():
        raise InputError(f"network file not found: {arg}")
    return load_network(path)


def _max_j(path) -> int:
    with open(path, encoding="utf-8") as fh:
        rows = [line.split(",") for line in fh.read().splitlines()[1:] if line.strip()]
    try:
        return max(int(r[1]) for r in rows)
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: cannot infer the layer count") from exc


def _latency_params(args) -> LatencyModelParams:
    return LatencyModelParams(args.mac_cost, args.layer_overhead)


def build_tables(cfg: RunConfig) -> tuple[NetworkSpec | None, CostTable, ImportanceTable, int]:
    """Load or synthesize both tables, normalise importances and discretize latencies."""
    net = resolve_network(cfg.network_path) if cfg.network_path else None
    L = net.L if net is not None else _max_j(cfg.latency_path)
    blocks = None
    if net is not None:
        blocks = feasible_latency_blocks(net, cfg.forbid_wide_after_stride)
    if cfg.latency_path:
        T_ms = load_cost_table(cfg.latency_path, L)
    else:
        T_ms = synthesize_latency(net, blocks, LatencyModelParams(cfg.mac_cost, cfg.layer_overhead))
    if cfg.importance_path:
        I = load_importance_table(cfg.importance_path, L, net)
    else:
        I = synthesize_importance(net, blocks, cfg.seed, cfg.mode)
    if I.mode != cfg.mode:
        raise InputError(f"importance table is {I.mode}-mode but --mode is {cfg.mode}")
    I = normalize_importance(I, cfg.alpha, size_one_scores(I))
    T, ticks = discretize(T_ms, cfg.budget_ms, cfg.scale)
    return net, T, I, ticks


def _solve(net, T, I, ticks, mode) -> Plan:
    if mode == "base":
        return solve_base(T, I, ticks)
    return solve_extended(T, I, net, ticks)


def _oracle(net, T, I, ticks, mode) -> Plan:
    if mode == "base":
        return brute_force_base(T, I, ticks)
    return brute_force_extended(T, I, net, ticks)


def _config(args) -> RunConfig:
    return RunConfig(
        network_path=args.network,
        latency_path=args.latency,
        importance_path=args.importance,
        budget_ms=args.budget_ms,
        scale=args.scale,
        mode=args.mode,
        alpha=args.alpha,
        seed=args.seed,
        forbid_wide_after_stride=args.forbid_wide_after_stride,
        mac_cost=args.mac_cost,
        layer_overhead=args.layer_overhead,
    )


def _infeasible_message(exc: InfeasibleBudget, scale: int) -> str:
    return (
        f"infeasible: budget of {exc.budget} ticks ({exc.budget / scale:g} ms) does not exceed "
        f"T_opt[0,L] = {exc.minimum} ticks ({exc.minimum / scale:g} ms)"
    )


# -- commands -------------------------------------------------------------------

def cmd_gen_tables(args) -> int:
    net = resolve_network(args.network)
    blocks = feasible_latency_blocks(net, args.forbid_wide_after_stride)
    T = synthesize_latency(net, blocks, _latency_params(args))
    I = synthesize_importance(net, blocks, args.seed, args.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_cost_table(T, out / "latency.csv")
    save_importance_table(I, out / "importance.csv")
    print(f"network: {net.name or args.network} (L={net.L}, {len(net.skips)} skips)")
    print(f"latency blocks: {len(blocks)}")
    print(f"importance blocks: {len(I)} ({args.mode})")
    if args.mode == "base":
        print(f"extended importance blocks: {len(feasible_importance_blocks(net, blocks))}")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _config(args)
    net, T, I, ticks = build_tables(cfg)
    try:
        plan = _solve(net, T, I, ticks, cfg.mode)
    except InfeasibleBudget as exc:
        print(_infeasible_message(exc, cfg.scale), file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.oracle:
        ref = _oracle(net, T, I, ticks, cfg.mode)
        if ref.importance != plan.importance:
            print(
                f"oracle disagreement: DP objective {plan.importance!r} vs brute force {ref.importance!r}",
                file=sys.stderr,
            )
            return EXIT_VERIFY
        print(f"oracle agrees: objective {ref.importance!r}", file=sys.stderr)
    if net is not None:
        plan.validate(net)
    print(json.dumps(plan.to_dict(), indent=1))
    print(
        f"A={list(plan.A)} S={list(plan.S)} latency {plan.predicted_latency_ms:g} ms "
        f"(budget {plan.budget_ms:g} ms, T_opt[0,L] {optimal_latency(T).t_opt[0, T.L] / cfg.scale:g} ms) "
        f"importance {plan.importance:.6g}, {len(plan.S) + 1} merged layers",
        file=sys.stderr,
    )
    if args.output:
        Path(args.output).write_text(json.dumps(plan.to_dict(), indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_apply(args) -> int:
    net = resolve_network(args.network)
    plan = load_plan(args.plan)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.weights:
        net, kernels = load_weights(args.weights, net)
    else:
        net, kernels = random_weights(net, args.seed)
        save_weights(out / "weights.npz", kernels, net)
    reference = prepare_reference(net, plan)
    merged, merged_kernels = apply_plan(net, kernels, plan)
    save_network(reference, out / "reference.json", bn_stats=False)
    save_weights(out / "reference_weights.npz", kernels, reference)
    save_network(merged, out / "merged.json", bn_stats=False)
    save_weights(out / "merged_weights.npz", merged_kernels, merged)
    print(f"merged layers: {merged.L}")
    print(f"wrote {out / 'merged.json'}, {out / 'merged_weights.npz'}, {out / 'reference.json'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    dtype = np.float32 if args.f32 else np.float64
    original, ow = load_weights(args.original_weights, resolve_network(args.original))
    merged, mw = load_weights(args.merged_weights, resolve_network(args.merged))
    report = verify_equivalence(
        original,
        [k.astype(dtype) for k in ow],
        merged,
        [k.astype(dtype) for k in mw],
        trials=args.trials,
        dtype=dtype,
        seed=args.seed,
        input_size=args.input_size,
    )
    print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_oracle(args) -> int:
    cfg = _config(args)
    net, T, I, ticks = build_tables(cfg)
    try:
        dp_plan = _solve(net, T, I, ticks, cfg.mode)
    except InfeasibleBudget as exc:
        try:
            _oracle(net, T, I, ticks, cfg.mode)
        except InfeasibleBudget:
            print(_infeasible_message(exc, cfg.scale), file=sys.stderr)
            return EXIT_INFEASIBLE
        print("oracle disagreement: brute force found a plan the DP reports infeasible", file=sys.stderr)
        return EXIT_VERIFY
    ref = _oracle(net, T, I, ticks, cfg.mode)
    agree = ref.importance == dp_plan.importance and dp_plan.latency_ticks < ticks
    print(json.dumps({"dp": dp_plan.to_dict(), "oracle": ref.to_dict(), "agree": agree}, indent=1))
    return EXIT_OK if agree else EXIT_VERIFY


# -- argument parsing ---------------------------------------------------------------

def _add_table_args(p):
    p.add_argument("--network", help="network JSON file or shipped fixture name")
    p.add_argument("--latency", help="latency CSV (i,j,ms); synthesized from the network if omitted")
    p.add_argument("--importance", help="importance CSV; synthesized from --seed if omitted")
    p.add_argument("--budget-ms", type=float, required=True)
    p.add_argument("--scale", type=int, default=100, help="ticks per millisecond")
    p.add_argument("--mode", choices=["base", "extended"], default="base")
    p.add_argument("--alpha", type=float, default=0.0, help="importance normalisation strength")
    p.add_argument("--seed", type=int, default=0)
    _add_synth_args(p)


def _add_synth_args(p):
    p.add_argument(
        "--forbid-wide-after-stride",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="reject merges placing a kernel wider than 1 after a strided layer",
    )
    p.add_argument("--mac-cost", type=float, default=1e-8, help="synthetic latency: ms per MAC")
    p.add_argument("--layer-overhead", type=float, default=0.01, help="synthetic latency: ms per layer")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="depthmerge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-tables", help="write synthetic latency and importance tables")
    p.add_argument("--network", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=["base", "extended"], default="base")
    p.add_argument("--seed", type=int, default=0)
    _add_synth_args(p)
    p.set_defaults(func=cmd_gen_tables)

    p = sub.add_parser("plan", help="solve for A and S under a latency budget")
    _add_table_args(p)
    p.add_argument("--oracle", action="store_true", help="cross-check against brute force")
    p.add_argument("--output", help="also write the plan JSON here")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("apply", help="merge a network according to a plan")
    p.add_argument("--network", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--weights", help="weights file (.npz or .json); random if omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("verify", help="compare two networks on random inputs")
    p.add_argument("--original", required=True)
    p.add_argument("--original-weights", required=True)
    p.add_argument("--merged", required=True)
    p.add_argument("--merged-weights", required=True)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int)
    prec = p.add_mutually_exclusive_group()
    prec.add_argument("--f32", action="store_true", help="32-bit floats, relative tolerance")
    prec.add_argument("--f64", action="store_true", help="64-bit floats, absolute tolerance (default)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="solve with both the DP and brute force and compare")
    _add_table_args(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except InfeasibleBudget as exc:
        print(_infeasible_message(exc, getattr(args, "scale", 1)), file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DepthMergeError, InputError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
