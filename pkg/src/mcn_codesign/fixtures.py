"""Reference instances: the seven-node mesh and its schedules, plus the
plant/quantizer settings used by the worked examples."""

from __future__ import annotations

from typing import Iterable, Mapping

from .network import QuantizationSpec, RadioGraph, Scheduling, uniform_indegree_weights
from .optimize import CodesignProblem, NetworkSide
from .poly import Polynomial, RationalTF, split_stable

SLOT = 0.01  # seconds
MESH_NODES = tuple(f"v{i}" for i in range(1, 8))
MESH_EDGES = tuple((f"v{a}", f"v{b}") for a, b in [
    (1, 2), (1, 3), (1, 4), (2, 5), (2, 7), (3, 5), (3, 6), (3, 7), (4, 6), (4, 7), (5, 7), (6, 7)])
COMPAT_SETS = (frozenset({"v1", "v5", "v6"}), frozenset({"v2", "v3", "v4"}))


def _links(codes: Iterable[int]):
    return [(f"v{c // 10}", f"v{c % 10}") for c in codes]


def schedule(slots: Iterable[Iterable[int]], slot_duration: float = SLOT) -> Scheduling:
    """Schedule from per-slot link codes, ``25`` meaning ``(v2, v5)``."""
    assign = {}
    for h, codes in enumerate(slots, 1):
        for e in _links(codes):
            assign[e] = h
    return Scheduling.from_assignment(assign, slot_duration)


SCHEDULES = {
    "ex1_a": [[12, 13, 14], [25, 27, 35, 36, 37, 46, 47], [57, 67]],
    "ex1_b": [[12, 13, 14, 57, 67], [25, 27, 35, 36, 37, 46, 47]],
    "ex4_a": [[12, 13, 14, 57, 67], [25, 27, 35, 36, 37, 46, 47]],
    "ex4_b": [[12, 13, 14, 27, 37, 47, 57, 67], [25, 35, 36, 46]],
    "ex4_c": [[12, 13, 14, 25, 35, 36, 46, 47, 67], [27, 37, 57]],
    "ex4_obs": [[12, 13, 14, 25, 27, 35, 36, 37, 46, 47, 57, 67]],
}


def mesh_graph(kind: str = "controllability", weights: Mapping | None = None) -> RadioGraph:
    return RadioGraph(MESH_NODES, MESH_EDGES, "v1", "v7", kind, weights)


def mesh_uniform() -> RadioGraph:
    g = mesh_graph()
    return g.with_weights(uniform_indegree_weights(g))


def unstable_plant():
    """``P(z) = 1/(z + 3)`` sampled at the frame rate."""
    return split_stable(RationalTF(Polynomial([1.0]), Polynomial([3.0, 1.0]), 2 * SLOT))


QUANT_U = QuantizationSpec(0.1, 500.0)
QUANT_Y = QuantizationSpec(0.1, 500.0)

# node amplitudes for the high-gain design: alpha(v2) = 450, alpha(v5) = 0.003
CASE1_ALPHA = {"v2": 450.0, "v3": 1.0, "v4": 1.0, "v5": 0.003, "v6": 1.0}
EXAMPLE3_CASES = {
    1: {"gamma": {1: 450.0, 2: 0.003}, "alpha": CASE1_ALPHA},
    2: {"gamma": {1: 1.0, 2: 1.0}, "alpha": None},
}


def example3_problem(case: int | None = 1, model: int = 2, overshoot_u=None, overshoot_y=None,
                     rate_bound=None) -> CodesignProblem:
    """Unstable first-order plant behind the mesh (two-delay schedule), no sensing network.

    ``case`` pins the controllability gains of one of the two reference
    designs; ``case=None`` leaves them free with a single numerator coefficient.
    """
    g = mesh_graph()
    sched = schedule(SCHEDULES["ex1_b"])
    if case is None:
        side = NetworkSide(g, sched, QUANT_U, rate_bound)
        return CodesignProblem(unstable_plant(), side, None, model, overshoot_u, overshoot_y, s=0)
    spec = EXAMPLE3_CASES[case]
    side = NetworkSide(g, sched, QUANT_U, rate_bound, gamma=spec["gamma"], alpha_targets=spec["alpha"])
    return CodesignProblem(unstable_plant(), side, None, model, overshoot_u, overshoot_y, s=1)


def example4_problem(which: str = "a", rate_bound: float | None = 3000.0, model: int = 1,
                     overshoot: float | None = 10.0) -> CodesignProblem:
    """Plant behind a controllability schedule ``a``, ``b`` or ``c`` and the one-slot sensing schedule."""
    R = NetworkSide(mesh_graph(), schedule(SCHEDULES[f"ex4_{which}"]), QUANT_U, rate_bound)
    O = NetworkSide(mesh_graph("observability"), schedule(SCHEDULES["ex4_obs"]), QUANT_Y, rate_bound)
    return CodesignProblem(unstable_plant(), R, O, model, overshoot, overshoot, s=0)
