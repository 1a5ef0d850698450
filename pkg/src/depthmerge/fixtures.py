"""Small shipped networks and tables used by the tests, the docs and the CLI."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .network import Activation, BatchNormParams, ConvLayer, NetworkSpec, SkipConnection, mobilenet_v2, validate_network
from .tables import CostTable, ImportanceTable

RELU = Activation.RELU
RELU6 = Activation.RELU6
IDENT = Activation.IDENTITY

NETWORK_FIXTURES = ("mobilenet_v2", "toy5", "irb_small")


def toy5() -> NetworkSpec:
    """Five 3x3 convs with ReLU, planned with A={3}, S={2,3} into three layers."""
    layers = [ConvLayer(3 if l == 0 else 4, 4, 3, 1, 1, activation=RELU if l < 4 else IDENT) for l in range(5)]
    net = NetworkSpec(tuple(layers), (), 3, 12, 12, name="toy5")
    validate_network(net)
    return net


def irb_small() -> NetworkSpec:
    """A strided stem and two inverted residual blocks, the first with a skip."""

    def conv(cin, cout, k, s=1, groups=1, act=RELU6):
        return ConvLayer(cin, cout, k, s, (k - 1) // 2, groups, False, BatchNormParams.identity(cout), act)

    layers = [
        conv(3, 8, 3, 2),
        conv(8, 16, 1),
        conv(16, 16, 3, 1, 16),
        conv(16, 8, 1, act=IDENT),
        conv(8, 24, 1),
        conv(24, 24, 3, 2, 24),
        conv(24, 12, 1, act=IDENT),
        conv(12, 16, 1, act=IDENT),
    ]
    net = NetworkSpec(tuple(layers), (SkipConnection(1, 4),), 3, 16, 16, name="irb_small")
    validate_network(net)
    return net


def build_network(name: str) -> NetworkSpec:
    builders = {"mobilenet_v2": mobilenet_v2, "toy5": toy5, "irb_small": irb_small}
    if name not in builders:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(NETWORK_FIXTURES)}")
    return builders[name]()


# A three-layer instance whose step D[3, 21] is worked through in the docs.
# T_opt[., 3] = (20, 14, 11) as in the worked example, with singleton costs
# chosen so that every other T_opt entry is consistent.
STEP_LATENCY = {(0, 1): 6, (1, 2): 6, (0, 2): 12, (2, 3): 11, (1, 3): 14, (0, 3): 20}
STEP_IMPORTANCE = {(0, 1): 0.5, (0, 2): 0.9, (1, 2): 0.3, (0, 3): 1.8, (1, 3): 1.4, (2, 3): 0.7}


def step_tables() -> tuple[CostTable, ImportanceTable]:
    """Three-layer tables in ticks (scale 1)."""
    return CostTable(3, dict(STEP_LATENCY), scale=1), ImportanceTable(3, dict(STEP_IMPORTANCE))


def data_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("depthmerge") / "data" / name))
