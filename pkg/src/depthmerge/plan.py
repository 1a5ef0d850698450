"""The solution record shared by the solvers, the merge engine and the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import PlanError


@dataclass(frozen=True)
class Plan:
    """Which activations to keep (A), where to cut merges (S), importance boundaries (B).

    All three are sorted tuples of interior boundary indices in 1..L-1.
    Latency and budget are in integer ticks; ``scale`` ticks make a millisecond.
    """

    L: int
    A: tuple[int, ...]
    S: tuple[int, ...]
    B: tuple[int, ...]
    latency_ticks: int
    importance: float
    budget_ticks: int
    scale: int = 1
    mode: str = "base"

    @property
    def predicted_latency_ms(self) -> float:
        return self.latency_ticks / self.scale

    @property
    def budget_ms(self) -> float:
        return self.budget_ticks / self.scale

    def boundaries(self) -> list[int]:
        """Cut points of the merged network: 0, S..., L."""
        return [0, *self.S, self.L]

    def validate(self, net=None) -> None:
        for name in ("A", "S", "B"):
            idx = getattr(self, name)
            if list(idx) != sorted(set(idx)):
                raise PlanError(f"{name} must be strictly increasing, got {list(idx)}")
            if any(not 1 <= v <= self.L - 1 for v in idx):
                raise PlanError(f"{name} has entries outside 1..L-1: {list(idx)}")
        if not set(self.A) <= set(self.S):
            raise PlanError(f"A={list(self.A)} is not a subset of S={list(self.S)}")
        if not set(self.A) <= set(self.B):
            raise PlanError(f"A={list(self.A)} is not a subset of B={list(self.B)}")
        if self.mode not in ("base", "extended"):
            raise PlanError(f"unknown mode {self.mode!r}")
        if self.mode == "base" and self.A != self.B:
            raise PlanError("in base mode B must equal A")
        if net is not None:
            if net.L != self.L:
                raise PlanError(f"plan is for L={self.L}, network has L={net.L}")
            if self.mode == "extended":
                for b in set(self.B) - set(self.A):
                    if not net.activation(b).is_identity:
                        raise PlanError(f"boundary {b} is in B but not A, yet its activation is not identity")

    def to_dict(self) -> dict:
        return {
            "A": list(self.A),
            "S": list(self.S),
            "B": list(self.B),
            "predicted_latency_ms": self.predicted_latency_ms,
            "predicted_importance": self.importance,
            "budget_ms": self.budget_ms,
            "scale": self.scale,
            "L": self.L,
            "mode": self.mode,
            "latency_ticks": self.latency_ticks,
            "budget_ticks": self.budget_ticks,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Plan":
        try:
            scale = int(doc.get("scale", 1))
            A = tuple(int(v) for v in doc["A"])
            return cls(
                L=int(doc["L"]),
                A=A,
                S=tuple(int(v) for v in doc["S"]),
                B=tuple(int(v) for v in doc.get("B", A)),
                latency_ticks=int(doc.get("latency_ticks", round(float(doc.get("predicted_latency_ms", 0)) * scale))),
                importance=float(doc.get("predicted_importance", 0.0)),
                budget_ticks=int(doc.get("budget_ticks", round(float(doc.get("budget_ms", 0)) * scale))),
                scale=scale,
                mode=doc.get("mode", "base"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanError(f"malformed plan: {exc!r}") from exc


def save_plan(plan: Plan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_plan(path) -> Plan:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}: not valid JSON ({exc})") from exc
    return Plan.from_dict(doc)
