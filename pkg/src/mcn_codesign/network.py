"""Radio connectivity graphs, periodic scheduling and the data-flow algebra.

A path's delay (in frames) is ``1 + #`` of consecutive hop pairs whose slot
does not increase: a hop scheduled at or before the previous hop's slot has
to wait for the next frame.  Everything below (delay classes, gamma, the
per-link/per-node alpha amplitudes) is computed by enumerating source-rooted
prefixes together with that timing state.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from graphlib import CycleError, TopologicalSorter
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .poly import Polynomial, RationalTF

Node = str
Edge = tuple[str, str]
Path = tuple[str, ...]
Weights = Mapping[Edge, float]


class NetworkError(ValueError):
    """Structural problem with a graph or schedule."""


class RateModelError(ValueError):
    """Rate formula undefined, e.g. an element whose amplitude is zero."""


class SingularityError(ArithmeticError):
    """A constructive weight design hit a zero pivot."""


class GainTargetUnreachable(ArithmeticError):
    """Target gamma not reachable with the model-2 free weights."""


def node_key(v: str):
    return tuple(int(t) if t.isdigit() else t for t in re.split(r"(\d+)", str(v)))


def edge_key(e: Edge):
    return (node_key(e[0]), node_key(e[1]))


def edge_label(e: Edge) -> str:
    return f"{e[0]}->{e[1]}"


@dataclass(frozen=True)
class RadioGraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    source: Node
    sink: Node
    kind: str = "controllability"
    weights: Mapping[Edge, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        nodes = tuple(sorted(set(self.nodes), key=node_key))
        edges = tuple(sorted({(str(a), str(b)) for a, b in self.edges}, key=edge_key))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        if self.kind not in ("controllability", "observability"):
            raise NetworkError(f"unknown graph kind {self.kind!r}")
        ns = set(nodes)
        for a, b in edges:
            if a not in ns or b not in ns:
                raise NetworkError(f"edge {a}->{b} references an undeclared node")
            if a == b:
                raise NetworkError(f"self loop at {a}")
        if self.source not in ns or self.sink not in ns:
            raise NetworkError("source and sink must be declared nodes")
        if self.source == self.sink:
            raise NetworkError("source and sink must differ")
        try:
            TopologicalSorter({v: self.pre(v) for v in nodes}).prepare()
        except CycleError as exc:
            raise NetworkError(f"graph has a cycle: {exc.args[1]}") from None
        fwd = self._reach(self.source, self.successors)
        bwd = self._reach(self.sink, self.pre)
        stray = [v for v in nodes if v not in fwd or v not in bwd]
        if stray:
            raise NetworkError(f"nodes not on any {self.source}->{self.sink} path: {stray}")
        if self.weights is not None:
            w = {tuple(e): float(x) for e, x in self.weights.items()}
            missing = [edge_label(e) for e in edges if e not in w]
            if missing:
                raise NetworkError(f"missing weights for {missing}")
            object.__setattr__(self, "weights", w)

    @staticmethod
    def _reach(start, step):
        seen, stack = {start}, [start]
        while stack:
            for w in step(stack.pop()):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    def successors(self, v: Node) -> list[Node]:
        return [b for a, b in self.edges if a == v]

    def pre(self, v: Node) -> list[Node]:
        return [a for a, b in self.edges if b == v]

    def inc(self, v: Node) -> list[Edge]:
        return [e for e in self.edges if e[1] == v]

    def out(self, v: Node) -> list[Edge]:
        return [e for e in self.edges if e[0] == v]

    def topological_order(self) -> tuple[Node, ...]:
        # ties resolved by node order so results are reproducible
        order = []
        indeg = {v: len(self.pre(v)) for v in self.nodes}
        ready = sorted((v for v in self.nodes if indeg[v] == 0), key=node_key)
        while ready:
            v = ready.pop(0)
            order.append(v)
            for w in self.successors(v):
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
                    ready.sort(key=node_key)
        return tuple(order)

    @property
    def interior(self) -> tuple[Node, ...]:
        return tuple(v for v in self.topological_order() if v not in (self.source, self.sink))

    def with_weights(self, weights: Weights) -> RadioGraph:
        return RadioGraph(self.nodes, self.edges, self.source, self.sink, self.kind, dict(weights))

    def require_weights(self, weights: Weights | None = None) -> dict[Edge, float]:
        w = weights if weights is not None else self.weights
        if w is None:
            raise NetworkError("graph has no weight function")
        return {e: float(w[e]) for e in self.edges}


def uniform_indegree_weights(g: RadioGraph) -> dict[Edge, float]:
    """``W(v, v') = 1/|inc(v')|``; also the minimal-rate preset of model 2."""
    return {e: 1.0 / len(g.inc(e[1])) for e in g.edges}


def minimal_rate_link_weights(g: RadioGraph) -> dict[Edge, float]:
    """``W(v, v') = 1/|inc(v)|`` (source links 1): every link amplitude equals 1."""
    return {e: 1.0 if e[0] == g.source else 1.0 / len(g.inc(e[0])) for e in g.edges}


@dataclass(frozen=True)
class Scheduling:
    period: int
    slots: Mapping[int, frozenset[Edge]]
    slot_duration: float

    def __post_init__(self):
        if int(self.period) != self.period or self.period < 1:
            raise NetworkError("period must be a positive integer")
        if not self.slot_duration > 0:
            raise NetworkError("slot duration must be positive")
        slots = {}
        seen: dict[Edge, int] = {}
        for h, es in self.slots.items():
            h = int(h)
            if not 1 <= h <= self.period:
                raise NetworkError(f"slot {h} outside 1..{self.period}")
            es = frozenset((str(a), str(b)) for a, b in es)
            for e in es:
                if e in seen:
                    raise NetworkError(f"link {edge_label(e)} scheduled twice per frame")
                seen[e] = h
            slots[h] = es
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "_slot_of", seen)

    @classmethod
    def from_assignment(cls, assignment: Mapping[Edge, int], slot_duration: float, period: int | None = None):
        period = period or max(assignment.values())
        slots: dict[int, set] = {h: set() for h in range(1, period + 1)}
        for e, h in assignment.items():
            slots[h].add(e)
        return cls(period, {h: frozenset(es) for h, es in slots.items()}, slot_duration)

    @property
    def frame_duration(self) -> float:
        return self.period * self.slot_duration

    def slot_of(self, e: Edge) -> int:
        try:
            return self._slot_of[e]
        except KeyError:
            raise NetworkError(f"link {edge_label(e)} is not scheduled") from None

    def assignment(self) -> dict[Edge, int]:
        return dict(self._slot_of)

    def check_covers(self, g: RadioGraph) -> None:
        extra = set(self._slot_of) - set(g.edges)
        if extra:
            raise NetworkError(f"schedule references unknown links {sorted(map(edge_label, extra))}")
        for e in g.edges:
            self.slot_of(e)

    def padded(self, period: int) -> Scheduling:
        if period < self.period:
            raise NetworkError("cannot shrink a schedule")
        return Scheduling.from_assignment(self.assignment(), self.slot_duration, period)

    def encoding(self) -> tuple:
        return (self.period, tuple(sorted(((edge_key(e), h) for e, h in self._slot_of.items()))))


def path_edges(path: Sequence[Node]) -> list[Edge]:
    return list(zip(path[:-1], path[1:]))


def enumerate_paths(g: RadioGraph) -> list[Path]:
    out: list[Path] = []

    def walk(v, acc):
        if v == g.sink:
            out.append(tuple(acc))
            return
        for w in sorted(g.successors(v), key=node_key):
            walk(w, acc + [w])

    walk(g.source, [g.source])
    return out


def path_delay(path: Sequence[Node], sched: Scheduling) -> int:
    slots = [sched.slot_of(e) for e in path_edges(path)]
    if not slots:
        raise NetworkError("a path needs at least one link")
    return 1 + sum(1 for a, b in zip(slots, slots[1:]) if b <= a)


def path_weight(path: Sequence[Node], weights: Weights) -> float:
    w = 1.0
    for e in path_edges(path):
        w *= weights[e]
    return w


@dataclass(frozen=True)
class DelayProfile:
    delays: tuple[int, ...]
    paths_by_delay: Mapping[int, tuple[Path, ...]]
    gamma: Mapping[int, float] | None = None

    @property
    def max_delay(self) -> int:
        return self.delays[-1]

    @property
    def min_delay(self) -> int:
        return self.delays[0]

    def gamma_vector(self) -> np.ndarray:
        if self.gamma is None:
            raise NetworkError("profile has no gamma (weights are free)")
        return np.array([self.gamma[d] for d in self.delays])

    def with_gamma(self, gamma: Mapping[int, float]) -> DelayProfile:
        missing = set(self.delays) - set(gamma)
        if missing:
            raise NetworkError(f"gamma missing for delays {sorted(missing)}")
        return DelayProfile(self.delays, self.paths_by_delay, {d: float(gamma[d]) for d in self.delays})


def delay_profile(g: RadioGraph, sched: Scheduling, weights: Weights | None = None) -> DelayProfile:
    sched.check_covers(g)
    groups: dict[int, list[Path]] = {}
    for p in enumerate_paths(g):
        groups.setdefault(path_delay(p, sched), []).append(p)
    delays = tuple(sorted(groups))
    w = weights if weights is not None else g.weights
    gamma = None
    if w is not None:
        gamma = {d: float(sum(path_weight(p, w) for p in groups[d])) for d in delays}
    return DelayProfile(delays, {d: tuple(groups[d]) for d in delays}, gamma)


def network_tf(profile: DelayProfile, sample_time: float | None = None) -> RationalTF:
    """``G(z) = sum_d gamma(d) z^(max_delay - d) / z^max_delay``."""
    top = profile.max_delay
    num = np.zeros(top)
    for d in profile.delays:
        num[top - d] += profile.gamma[d]
    return RationalTF(Polynomial(num), Polynomial.monomial(top), sample_time)


def network_numerator(gamma: Mapping[int, float], max_delay: int) -> Polynomial:
    num = np.zeros(max_delay)
    for d, x in gamma.items():
        num[max_delay - d] += x
    return Polynomial(num)


# ---------------------------------------------------------------------------
# prefix enumeration and the alpha amplitudes


@dataclass(frozen=True)
class _Prefix:
    edge: Edge
    weight: float
    frames: int  # frames elapsed once the last link has fired
    slot: int


def _prefixes(g: RadioGraph, sched: Scheduling, weights: Weights) -> Iterator[_Prefix]:
    def walk(v, w, frames, slot):
        for e in g.out(v):
            s = sched.slot_of(e)
            f = 1 if slot is None else frames + (1 if s <= slot else 0)
            ww = w * weights[e]
            yield _Prefix(e, ww, f, s)
            if e[1] != g.sink:
                yield from walk(e[1], ww, f, s)

    yield from walk(g.source, 1.0, 0, None)


def alpha_links(g: RadioGraph, sched: Scheduling, weights: Weights | None = None) -> dict[Edge, dict[int, float]]:
    """Per-link amplitude split by the frame in which the link fires.

    For links into the sink that frame is the completed path delay, so
    ``gamma(d) = sum over inc(sink) of alpha_e(d)``.
    """
    sched.check_covers(g)
    w = g.require_weights(weights)
    out: dict[Edge, dict[int, float]] = {e: {} for e in g.edges}
    for p in _prefixes(g, sched, w):
        out[p.edge][p.frames] = out[p.edge].get(p.frames, 0.0) + p.weight
    return out


def alpha_nodes(g: RadioGraph, sched: Scheduling, weights: Weights | None = None) -> dict[Node, dict[int, float]]:
    """Per-node amplitude (model 2), split by delay class.

    A node adjacent to the sink classifies each incoming prefix by the delay
    it completes with over the node's own sink link; other nodes use the
    arrival frame.  The source carries the unit input.
    """
    sched.check_covers(g)
    w = g.require_weights(weights)
    sink_slot = {v: sched.slot_of((v, g.sink)) for v in g.pre(g.sink)}
    out: dict[Node, dict[int, float]] = {v: {} for v in g.nodes if v != g.sink}
    out[g.source] = {1 if g.source in sink_slot else 0: 1.0}
    for p in _prefixes(g, sched, w):
        v = p.edge[1]
        if v == g.sink:
            continue
        if v in sink_slot:
            d = p.frames + (1 if sink_slot[v] <= p.slot else 0)
        else:
            d = p.frames
        out[v][d] = out[v].get(d, 0.0) + p.weight
    return out


def totals(split: Mapping) -> dict:
    return {k: float(sum(v.values())) for k, v in split.items()}


# ---------------------------------------------------------------------------
# data rates


@dataclass(frozen=True)
class QuantizationSpec:
    delta: float
    max_value: float

    def __post_init__(self):
        if not self.delta > 0 or not self.max_value > 0:
            raise ValueError("quantization width and range must be positive")
        if 2.0 * self.max_value / self.delta < 2.0:
            raise ValueError("quantization range must hold at least two levels")

    @property
    def levels(self) -> float:
        return 2.0 * self.max_value / self.delta


@dataclass(frozen=True)
class RateReport:
    model: int
    alphas: Mapping
    bits: Mapping
    rates: Mapping

    def max_rate(self) -> float:
        return max(self.rates.values())


def ceil_log2(x: Fraction) -> int:
    """Smallest integer k with 2**k >= x, exact for rational x > 0."""
    p, q = x.numerator, x.denominator
    if p <= 0:
        raise ValueError("ceil_log2 needs a positive argument")

    def at_least(k):
        return (q << k) >= p if k >= 0 else q >= (p << -k)

    k = p.bit_length() - q.bit_length()
    while not at_least(k):
        k += 1
    while at_least(k - 1):
        k -= 1
    return k


def rates(alphas: Mapping, q: QuantizationSpec, delta_slot: float, model: int = 1) -> RateReport:
    """Transmission rate per link (model 1) or node (model 2).

    ``bits = ceil(log2(2*max/delta * |alpha|/min|alpha|))`` is evaluated on
    the exact rational values of the floating-point inputs.
    """
    mags = {k: abs(float(a)) for k, a in alphas.items()}
    zero = [k for k, a in mags.items() if a == 0.0]
    if zero:
        raise RateModelError(f"zero amplitude (data never reaches it): {zero}")
    low = Fraction(min(mags.values()))
    levels = Fraction(2) * Fraction(q.max_value) / Fraction(q.delta)
    bits = {k: ceil_log2(levels * Fraction(a) / low) for k, a in mags.items()}
    return RateReport(model, dict(alphas), bits, {k: b / delta_slot for k, b in bits.items()})


@dataclass(frozen=True)
class RateBound:
    bound: float
    bits: int
    kappa: float


def rate_bound(bound: float, q: QuantizationSpec, delta_slot: float) -> RateBound:
    """Linear form of ``R <= bound``: ``|alpha| <= kappa * |alpha_other|`` for every other element."""
    bits = math.floor(bound * delta_slot + 1e-9)
    return RateBound(bound, bits, q.delta * 2.0**bits / (2.0 * q.max_value))


# ---------------------------------------------------------------------------
# constructive weight designs


def weights_from_alpha_links(g: RadioGraph, target: Mapping[Edge, float]) -> dict[Edge, float]:
    """Unique link weights realizing given per-link amplitudes (model 1).

    Uses ``W(v, v') * sum_{inc(v)} alpha = alpha_(v, v')`` in topological order.
    """
    missing = [edge_label(e) for e in g.edges if e not in target]
    if missing:
        raise NetworkError(f"missing alpha targets for {missing}")
    w: dict[Edge, float] = {}
    for v in g.topological_order():
        if v == g.sink:
            continue
        inflow = 1.0 if v == g.source else sum(float(target[e]) for e in g.inc(v))
        for e in g.out(v):
            a = float(target[e])
            if inflow == 0.0:
                if a != 0.0:
                    raise SingularityError(f"incoming amplitude at {v} is zero but {edge_label(e)} needs {a}")
                w[e] = 0.0
            else:
                w[e] = a / inflow
    return w


@dataclass(frozen=True)
class SeparationReport:
    ok: bool
    node: Node | None = None
    edges: tuple[Edge, Edge] | None = None


def check_delay_separation(g: RadioGraph, sched: Scheduling) -> SeparationReport:
    """Do data streams with different timing ever merge before the sink?

    At every node other than the sink, two incoming links must lead to the
    same completion delay along every continuation; otherwise a witness node
    and the two conflicting links are returned.
    """
    sched.check_covers(g)
    w = {e: 1.0 for e in g.edges}
    arrivals: dict[Edge, set[int]] = {e: set() for e in g.edges}
    for p in _prefixes(g, sched, w):
        arrivals[p.edge].add(p.frames)
    for v in g.topological_order():
        if v in (g.source, g.sink):
            continue
        ins = g.inc(v)
        outs = g.out(v)
        for i, e1 in enumerate(ins):
            for e2 in ins[i:]:
                s1, s2 = sched.slot_of(e1), sched.slot_of(e2)
                for eo in outs:
                    so = sched.slot_of(eo)
                    f1 = {f + (so <= s1) for f in arrivals[e1]}
                    f2 = {f + (so <= s2) for f in arrivals[e2]}
                    if len(f1 | f2) > 1:
                        return SeparationReport(False, v, (e1, e2))
    return SeparationReport(True)


def sink_edge_classes(g: RadioGraph, sched: Scheduling) -> dict[Edge, int]:
    """Delay class of each sink link; requires delay separation."""
    rep = check_delay_separation(g, sched)
    if not rep.ok:
        raise NetworkError(f"delay classes merge at {rep.node} via {rep.edges}")
    split = alpha_links(g, sched, {e: 1.0 for e in g.edges})
    return {e: next(iter(split[e])) for e in g.inc(g.sink)}


@dataclass(frozen=True)
class Model2Design:
    weights: dict[Edge, float]
    residual: float
    single_delay_nodes: tuple[Node, ...]  # F1
    mixed_delay_nodes: tuple[Node, ...]  # F2
    single_delays: tuple[int, ...]  # D1
    mixed_delays: tuple[int, ...]  # D2
    used_merge_freedom: bool


def weights_from_gamma_model2(
    g: RadioGraph,
    sched: Scheduling,
    target_gamma: Mapping[int, float],
    target_alpha: Mapping[Node, float] | None = None,
    tol: float = 1e-10,
) -> Model2Design:
    """Weights meeting node-amplitude and gamma targets under model 2.

    Each interior node fixes its amplitude through one designated incoming
    weight; the other incoming weights and all sink weights stay free.  Sink
    weights are solved first with the free interior weights at their
    equal-share default; when that cannot reach the mixed-delay classes the
    free interior weights are adjusted as well (variable projection).
    """
    sched.check_covers(g)
    prof = delay_profile(g, sched, {e: 1.0 for e in g.edges})
    if set(target_gamma) != set(prof.delays):
        raise NetworkError(f"gamma targets {sorted(target_gamma)} do not match delays {list(prof.delays)}")
    interior = g.interior
    alpha = {v: 1.0 for v in interior} if target_alpha is None else {v: float(target_alpha[v]) for v in interior}
    alpha[g.source] = 1.0
    zero = [v for v in interior if alpha[v] == 0.0]
    if zero:
        raise RateModelError(f"zero amplitude targets at {zero}")

    designated = {v: sorted(g.pre(v), key=node_key)[0] for v in interior}
    free_edges = [(u, v) for v in interior for u in sorted(g.pre(v), key=node_key) if u != designated[v]]
    sink_in = sorted(g.pre(g.sink), key=node_key)
    delays = prof.delays
    gam = np.array([float(target_gamma[d]) for d in delays])

    def interior_weights(phi):
        w = dict(zip(free_edges, phi))
        for v in interior:
            u0 = designated[v]
            rest = sum(w[(u, v)] * alpha[u] for u in g.pre(v) if u != u0)
            w[(u0, v)] = (alpha[v] - rest) / alpha[u0]
        return w

    def split_matrix(w):
        full = dict(w)
        for v in sink_in:
            full[(v, g.sink)] = 1.0
        nodes = alpha_nodes(g, sched, full)
        A = np.array([[nodes[v].get(d, 0.0) for v in sink_in] for d in delays])
        return A

    def sink_solve(A):
        x, *_ = np.linalg.lstsq(A, gam, rcond=None)
        return x, A @ x - gam

    phi0 = np.array([alpha[v] / (len(g.pre(v)) * alpha[u]) for u, v in free_edges])
    w_int = interior_weights(phi0)
    A = split_matrix(w_int)
    x, res = sink_solve(A)
    single = [v for j, v in enumerate(sink_in) if np.count_nonzero(np.abs(A[:, j]) > 0) == 1]
    mixed = [v for v in sink_in if v not in single]
    d1 = sorted({delays[int(np.nonzero(A[:, sink_in.index(v)])[0][0])] for v in single})
    d2 = [d for d in delays if d not in d1]
    scale = max(1.0, float(np.max(np.abs(gam))))
    used = False
    if np.max(np.abs(res)) > tol * scale and free_edges:
        used = True

        def fun(phi):
            return sink_solve(split_matrix(interior_weights(phi)))[1]

        sol = least_squares(fun, phi0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        w_int = interior_weights(sol.x)
        x, res = sink_solve(split_matrix(w_int))
    resid = float(np.max(np.abs(res))) if res.size else 0.0
    if resid > tol * scale:
        raise GainTargetUnreachable(
            f"gamma targets unreachable (residual {resid:.3e}); single-delay sink neighbours {single}, "
            f"mixed {mixed}, delays D1={d1} D2={d2}"
        )
    weights = dict(w_int)
    for v, xv in zip(sink_in, x):
        weights[(v, g.sink)] = float(xv)
    weights = {e: float(x) for e, x in weights.items()}
    return Model2Design(weights, resid, tuple(single), tuple(mixed), tuple(d1), tuple(d2), used)
