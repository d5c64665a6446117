"""Enumeration of admissible schedules and the ranking of schedule pairs.

Slot order carries timing (a hop placed at or before its predecessor's slot
waits a frame), so schedules that differ only by a permutation of slot
labels are genuinely different and all of them are kept.  Slots are never
left empty: an empty slot only lengthens the frame.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .network import Edge, Node, RadioGraph, Scheduling, edge_label
from .optimize import CodesignError, CodesignProblem, CodesignSolution, codesign

DEFAULT_BUDGET = 10**6
TIE_RTOL = 1e-9


class BudgetExceeded(RuntimeError):
    def __init__(self, visited: int, budget: int):
        super().__init__(f"schedule enumeration visited {visited} partial assignments, over the budget of "
                         f"{budget}; reduce the maximum period")
        self.visited = visited
        self.budget = budget


@dataclass(frozen=True)
class InterferenceSpec:
    """Nodes transmitting in one slot must all lie in a single compat set."""

    compat_sets: tuple[frozenset[Node], ...]
    link_conflicts: frozenset[frozenset[Edge]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "compat_sets", tuple(frozenset(map(str, s)) for s in self.compat_sets))
        object.__setattr__(self, "link_conflicts",
                           frozenset(frozenset(tuple(map(str, e)) for e in pair) for pair in self.link_conflicts))

    def validate(self, g: RadioGraph) -> None:
        covered = set().union(*self.compat_sets) if self.compat_sets else set()
        missing = sorted({a for a, _ in g.edges} - covered)
        if missing:
            raise ValueError(f"transmitting nodes outside every compat set: {missing}")

    def fits(self, transmitters: set[Node]) -> bool:
        return any(transmitters <= s for s in self.compat_sets)

    def slot_ok(self, edges: Iterable[Edge]) -> bool:
        edges = list(edges)
        if not self.fits({a for a, _ in edges}):
            return False
        for i, e in enumerate(edges):
            for f in edges[i + 1:]:
                if frozenset((e, f)) in self.link_conflicts:
                    return False
        return True


def is_admissible(g: RadioGraph, sched: Scheduling, ifr: InterferenceSpec) -> bool:
    """Independent check: every link once per frame and every slot interference-free."""
    assign = sched.assignment()
    if set(assign) != set(g.edges):
        return False
    return all(ifr.slot_ok(es) for es in sched.slots.values() if es)


def enumerate_schedules(g: RadioGraph, ifr: InterferenceSpec, max_period: int, slot_duration: float,
                        budget: int = DEFAULT_BUDGET) -> list[Scheduling]:
    """All admissible schedules with period ``1..max_period`` and no empty slot.

    Order: increasing period, then lexicographic slot vector over the sorted links.
    """
    if max_period < 1:
        raise ValueError("maximum period must be at least 1")
    ifr.validate(g)
    edges = list(g.edges)
    out: list[Scheduling] = []
    visited = 0
    for period in range(1, min(max_period, len(edges)) + 1):
        slot_tx: list[set[Node]] = [set() for _ in range(period)]
        slot_edges: list[list[Edge]] = [[] for _ in range(period)]
        assign: list[int] = []

        def rec(i: int):
            nonlocal visited
            visited += 1
            if visited > budget:
                raise BudgetExceeded(visited, budget)
            empty = sum(1 for es in slot_edges if not es)
            if len(edges) - i < empty:
                return
            if i == len(edges):
                out.append(Scheduling.from_assignment(dict(zip(edges, assign)), slot_duration, period))
                return
            e = edges[i]
            for h in range(period):
                tx = slot_tx[h] | {e[0]}
                if not ifr.fits(tx):
                    continue
                if any(frozenset((e, f)) in ifr.link_conflicts for f in slot_edges[h]):
                    continue
                added = e[0] not in slot_tx[h]
                slot_tx[h].add(e[0])
                slot_edges[h].append(e)
                assign.append(h + 1)
                rec(i + 1)
                assign.pop()
                slot_edges[h].pop()
                if added:
                    slot_tx[h].discard(e[0])

        rec(0)
    return out


@dataclass
class ScheduleEvaluation:
    index: int
    sched_R: Scheduling
    sched_O: Scheduling | None
    l2: float
    status: str
    delays_R: tuple[int, ...]
    delays_O: tuple[int, ...] | None
    solution: CodesignSolution | None = None
    oracle_l2: float | None = None

    @property
    def period(self) -> int:
        return max(self.sched_R.period, self.sched_O.period if self.sched_O else 1)

    @property
    def encoding(self) -> tuple:
        return (self.sched_R.encoding(), self.sched_O.encoding() if self.sched_O else ())


@dataclass
class ScheduleSearchResult:
    evaluated: list[ScheduleEvaluation]
    ordering: list[int]
    optimal_set: list[int]
    notes: list[str] = field(default_factory=list)

    def ranked(self) -> list[ScheduleEvaluation]:
        return [self.evaluated[i] for i in self.ordering]


def _pair_problem(template: CodesignProblem, sR: Scheduling, sO: Scheduling | None) -> CodesignProblem:
    period = max(sR.period, sO.period if sO is not None else 1)
    R = replace(template.R, sched=sR.padded(period))
    O = template.O
    if O is not None and sO is not None:
        O = replace(O, sched=sO.padded(period))
    return replace(template, R=R, O=O)


def _evaluate(args):
    idx, template, builder, sR, sO, with_oracle, oracle_kw = args
    try:
        p = builder(sR, sO) if builder is not None else _pair_problem(template, sR, sO)
        sol = codesign(p)
        status = sol.status
        value = sol.ranking_value
    except (ValueError, ArithmeticError) as exc:
        return ScheduleEvaluation(idx, sR, sO, math.inf, f"error: {exc}", (), None)
    oracle = None
    if with_oracle:
        from .optimize import brute_force_codesign

        try:
            oracle = math.sqrt(brute_force_codesign(p, **oracle_kw).value)
        except CodesignError:
            oracle = None
    return ScheduleEvaluation(idx, sR, sO, value, status, p.R.profile.delays,
                              p.O.profile.delays if p.O is not None else None, sol, oracle)


def schedule_search(template: CodesignProblem | None, candidates_R: Sequence[Scheduling],
                    candidates_O: Sequence[Scheduling] | None = None, workers: int = 1,
                    oracle: bool = False, oracle_kw: dict | None = None,
                    builder: Callable[[Scheduling, Scheduling | None], CodesignProblem] | None = None,
                    ) -> ScheduleSearchResult:
    """Rank every (controllability, observability) schedule pair by optimal L2.

    ``candidates_O=None`` keeps the template's observability schedule fixed.
    ``builder`` (picklable when ``workers > 1``) replaces the template when the
    plant itself depends on the frame length.  Infeasible pairs rank last with
    an infinite value.
    """
    if template is None and (builder is None or candidates_O is None):
        raise ValueError("without a template both a builder and observability candidates are needed")
    if not candidates_R:
        raise ValueError("no controllability schedules to rank")
    if candidates_O is None:
        pairs = [(sR, template.O.sched if template.O is not None else None) for sR in candidates_R]
    else:
        pairs = [(sR, sO) for sR in candidates_R for sO in candidates_O]
    jobs = [(i, template, builder, sR, sO, oracle, oracle_kw or {}) for i, (sR, sO) in enumerate(pairs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            evaluated = list(ex.map(_evaluate, jobs))
    else:
        evaluated = [_evaluate(j) for j in jobs]
    ordering = sorted(range(len(evaluated)), key=lambda i: (evaluated[i].l2, evaluated[i].encoding))
    best = evaluated[ordering[0]].l2
    optimal = []
    if math.isfinite(best):
        optimal = [i for i in ordering if evaluated[i].l2 <= best + TIE_RTOL * max(1.0, abs(best))]
    return ScheduleSearchResult(evaluated, ordering, optimal)


# ---------------------------------------------------------------------------
# data-rate sweeps


@dataclass(frozen=True)
class SweepPoint:
    bound: float
    l2: float
    status: str
    lower_bound: float


def rate_sweep(problem: CodesignProblem, bounds: Iterable[float],
               solve: Callable[[CodesignProblem], CodesignSolution] = codesign) -> list[SweepPoint]:
    out = []
    for b in bounds:
        sol = solve(problem.with_rate_bound(float(b)))
        lb = math.sqrt(sol.lower_bound_sq) if math.isfinite(sol.lower_bound_sq) else math.inf
        out.append(SweepPoint(float(b), sol.ranking_value, sol.status, lb))
    return out


def parse_sweep(spec: str) -> list[float]:
    """``"lo:hi:step"`` in Hz, inclusive of ``hi`` when it lies on the grid."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"rate sweep must look like lo:hi:step, got {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ValueError("rate sweep needs step > 0 and hi >= lo")
    n = int(math.floor((hi - lo) / step + 1e-9))
    return [lo + k * step for k in range(n + 1)]


def is_non_increasing(values: Sequence[float], rtol: float = 1e-12) -> bool:
    return all(b <= a + rtol * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def find_plateau(values: Sequence[float], rtol: float = 1e-9, min_points: int = 3) -> int | None:
    """Start of the first run of ``min_points`` consecutive values with no improvement above ``rtol``."""
    v = np.asarray(values, dtype=float)
    run_start = 0
    for k in range(1, v.size + 1):
        flat = k < v.size and np.isfinite(v[k]) and v[k - 1] - v[k] <= rtol * max(1.0, abs(v[k]))
        if not flat:
            if k - run_start >= min_points and np.isfinite(v[run_start]):
                return run_start
            run_start = k
    return None


def describe(sched: Scheduling) -> str:
    return " | ".join(f"{h}:" + ",".join(edge_label(e) for e in sorted(es)) for h, es in sorted(sched.slots.items()))
