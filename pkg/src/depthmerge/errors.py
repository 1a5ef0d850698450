"""Exception hierarchy.

Every error carries the offending index/pair so callers (and the CLI) can
report it without parsing messages.
"""


class DepthMergeError(Exception):
    """Base class for all package errors."""


class NetworkError(DepthMergeError):
    pass


class ChannelMismatch(NetworkError):
    def __init__(self, layer, detail=""):
        self.layer = layer
        super().__init__(f"channel mismatch at layer {layer}{': ' + detail if detail else ''}")


class CrossingSkips(NetworkError):
    def __init__(self, pair):
        self.pair = pair
        super().__init__(f"skip connections cross: {pair[0]} and {pair[1]}")


class NonOddKernel(NetworkError):
    def __init__(self, layer):
        self.layer = layer
        super().__init__(f"layer {layer} has an even kernel size")


class SkipShapeMismatch(NetworkError):
    def __init__(self, skip, detail=""):
        self.skip = skip
        super().__init__(f"skip {skip} joins tensors of different shape{': ' + detail if detail else ''}")


class NonPositiveSpatialDim(NetworkError):
    def __init__(self, layer):
        self.layer = layer
        super().__init__(f"layer {layer} produces a non-positive spatial dimension")


class TableError(DepthMergeError):
    pass


class ParseError(TableError):
    pass


class IndexOutOfRange(TableError):
    def __init__(self, key, L):
        self.key = key
        super().__init__(f"entry {key} out of range for L={L}")


class MaskViolation(TableError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"importance entry {key} violates the activation masks")


class NonFiniteValue(TableError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"entry {key} is not a finite value")


class EmptyReferenceSet(TableError):
    pass


class Overflow(TableError):
    pass


class SolverError(DepthMergeError):
    pass


class InfeasibleBudget(SolverError):
    def __init__(self, budget, minimum):
        self.budget = budget
        self.minimum = minimum
        super().__init__(
            f"budget {budget} ticks admits no plan; the fastest partition takes "
            f"T_opt[0,L]={minimum} ticks and the budget must exceed it"
        )


class NoFeasiblePartition(SolverError):
    def __init__(self, pair):
        self.pair = pair
        super().__init__(f"no feasible partition of block {pair}")


class InstanceTooLarge(SolverError):
    pass


class MergeError(DepthMergeError):
    pass


class ShapeMismatch(MergeError):
    pass


class NotFusable(MergeError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"skip cannot be fused: {reason}")


class InfeasibleSegment(MergeError):
    def __init__(self, pair, reason=""):
        self.pair = pair
        super().__init__(f"segment {pair} cannot be merged{': ' + reason if reason else ''}")


class ActivationInside(MergeError):
    def __init__(self, layer):
        self.layer = layer
        super().__init__(f"non-identity activation after layer {layer} lies inside the segment")


class PlanError(DepthMergeError):
    pass
