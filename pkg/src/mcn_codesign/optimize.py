"""Two-stage co-design of the deadbeat controller and the network weights.

Stage 1 is a convex QP in scaled network gains: ``theta = d0 * gamma_R``
(model 2, or any single-delay network) or ``beta = d0 * alpha_R`` over all
controllability links (model 1, one QP per sign of ``d0``).  Stage 2 solves
the deadbeat identity, linear in ``(c, gamma_O)`` once stage 1 is frozen.
Weights are then rebuilt constructively and every reported number is
recomputed from the weights.

Two brute-force grid oracles are included for desk-scale validation.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import network as nw
from .network import (
    Edge,
    Node,
    QuantizationSpec,
    RadioGraph,
    RateReport,
    Scheduling,
    SeparationReport,
)
from .poly import Polynomial, RationalTF, StableUnstableSplit, Z
from .qp import QPResult, QuadraticProgram, solve_qp
from .synthesis import (
    ClosedLoop,
    ControllerStructure,
    StepMetrics,
    closed_loop,
    core_degree,
    deadbeat_constraint,
    q_coefficients,
    solve_columns,
    solve_deadbeat,
    step_metrics,
    DeadbeatInfeasible,
)

AMPLITUDE_FLOOR = 1e-9
STAGE2_RCOND = 1e-10
STAGE2_TOL = 1e-8
CONSISTENCY_RTOL = 1e-6
FEAS_TOL = 1e-9
RATE_MARGIN = 1e-9


class CodesignError(ValueError):
    pass


class Infeasible(Exception):
    def __init__(self, stage: str, reason: str, certificate: dict | None = None):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason
        self.certificate = certificate or {}


# ---------------------------------------------------------------------------
# problem description


@dataclass(frozen=True)
class NetworkSide:
    graph: RadioGraph
    sched: Scheduling
    quant: QuantizationSpec
    rate_bound: float | None = None  # Hz, every link (model 1) or node (model 2)
    gamma: Mapping[int, float] | None = None  # pinned gains
    weights: Mapping[Edge, float] | None = None  # pinned weights (implies gamma)
    alpha_targets: Mapping[Node, float] | None = None  # model-2 node amplitudes, default all ones

    @cached_property
    def profile(self) -> nw.DelayProfile:
        return nw.delay_profile(self.graph, self.sched, self.weights)

    @property
    def pinned(self) -> bool:
        return self.gamma is not None or self.weights is not None

    def pinned_gamma(self) -> dict[int, float]:
        if self.weights is not None:
            return dict(self.profile.gamma)
        if self.gamma is None:
            raise CodesignError("network gains are free")
        missing = set(self.profile.delays) - set(self.gamma)
        extra = set(self.gamma) - set(self.profile.delays)
        if missing or extra:
            raise CodesignError(f"pinned gamma delays {sorted(self.gamma)} do not match {list(self.profile.delays)}")
        return {d: float(self.gamma[d]) for d in self.profile.delays}


@dataclass(frozen=True)
class CodesignProblem:
    plant: StableUnstableSplit
    R: NetworkSide
    O: NetworkSide | None = None
    model: int = 2
    overshoot_u: float | None = None
    overshoot_y: float | None = None
    s: int = 0
    amplitude: float = 1.0
    reference_lead: int = 1

    def __post_init__(self):
        if self.model not in (1, 2):
            raise CodesignError("computational model must be 1 or 2")
        if self.s < 0:
            raise CodesignError("numerator degree must be non-negative")
        if self.O is not None and not math.isclose(self.O.sched.slot_duration, self.R.sched.slot_duration):
            raise CodesignError("both networks must share the slot duration")
        core_degree(self.s, self.plant.stable_part.degree, self.ddr, self.ddo)

    @property
    def delta_slot(self) -> float:
        return self.R.sched.slot_duration

    @property
    def ddr(self) -> int:
        return self.R.profile.max_delay

    @property
    def ddo(self) -> int:
        return 0 if self.O is None else self.O.profile.max_delay

    @property
    def m(self) -> int:
        return core_degree(self.s, self.plant.stable_part.degree, self.ddr, self.ddo)

    @property
    def l(self) -> int:
        return self.m + self.plant.r + 1 - self.ddo

    def with_rate_bound(self, bound: float | None) -> CodesignProblem:
        O = None if self.O is None else replace(self.O, rate_bound=bound)
        return replace(self, R=replace(self.R, rate_bound=bound), O=O)


# ---------------------------------------------------------------------------
# convexity conditions


@dataclass(frozen=True)
class ConvexityReport:
    convexifiable: bool
    path: str  # naive | model1 | model2 | none
    naive: bool
    reasons: tuple[str, ...] = ()
    separation_R: SeparationReport | None = None
    separation_O: SeparationReport | None = None
    stage2_guaranteed: bool = False
    positive_weights: bool = True


def check_convexifiable(p: CodesignProblem) -> ConvexityReport:
    nR = len(p.R.profile.delays)
    nO = 1 if p.O is None else len(p.O.profile.delays)
    naive = nR == 1 and nO == 1
    reasons = []
    sepR = sepO = None
    if p.model == 1:
        sepR = nw.check_delay_separation(p.R.graph, p.R.sched)
        if p.O is not None:
            sepO = nw.check_delay_separation(p.O.graph, p.O.sched)
    guaranteed = (
        p.model == 2 and p.s == 0 and p.O is not None and not p.O.pinned and len(p.O.profile.delays) >= p.plant.r + 1
    )
    if naive:
        return ConvexityReport(True, "naive", True, ("single delay in both networks",), sepR, sepO, guaranteed)
    if p.s != 0:
        reasons.append(f"controller numerator has degree {p.s}; the relaxation needs a single coefficient")
    if p.model == 1:
        for name, sep in (("controllability", sepR), ("observability", sepO)):
            if sep is not None and not sep.ok:
                reasons.append(f"{name} delays merge at {sep.node} via {[nw.edge_label(e) for e in sep.edges]}")
    ok = not reasons
    path = f"model{p.model}" if ok else "none"
    return ConvexityReport(ok, path, False, tuple(reasons), sepR, sepO, guaranteed)


# ---------------------------------------------------------------------------
# stage 1


@dataclass(frozen=True)
class ConvexStage:
    kind: str  # naive | model1 | model2
    sign: int
    labels: tuple[str, ...]
    qp: QuadraticProgram
    Q: np.ndarray  # x -> ascending q (length l + 1)
    Qu: np.ndarray  # x -> ascending input coefficients
    l: int
    amplitude: float
    reference_lead: int
    edges: tuple[Edge, ...] = ()
    delays: tuple[int, ...] = ()

    @property
    def min_eigenvalue(self) -> float:
        return self.qp.min_eigenvalue()

    def q(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float)

    def l2_sq(self, x) -> float:
        return self.qp.objective(x)


def cumulative_matrix(l: int) -> np.ndarray:
    """``(C q)_k = sum_{h >= l - k} q_h`` for ``k = 0..l``."""
    k = np.arange(l + 1)[:, None]
    h = np.arange(l + 1)[None, :]
    return (h >= l - k).astype(float)


def _pad(q: np.ndarray, n: int) -> np.ndarray:
    if q.size > n and np.any(q[n:] != 0.0):
        raise CodesignError("output polynomial longer than the response time allows")
    out = np.zeros(n)
    out[: min(n, q.size)] = q[:n]
    return out


def _rate_presolve(side: NetworkSide, model: int, stage: str) -> float | None:
    """Kappa of the side's rate bound; raises when no amplitude pattern can meet it."""
    if side.rate_bound is None:
        return None
    rb = nw.rate_bound(side.rate_bound, side.quant, side.sched.slot_duration)
    if rb.kappa < 1.0:
        raise Infeasible(stage, f"rate bound {side.rate_bound} Hz allows {rb.bits} bits, fewer than the "
                                f"{nw.ceil_log2(Fraction(side.quant.levels))} needed at equal amplitudes",
                         {"kappa": rb.kappa, "bits": rb.bits})
    return rb.kappa


def build_stage1(p: CodesignProblem) -> tuple[ConvexStage, ...]:
    """Stage-1 QPs (two sign branches for model 1, one otherwise)."""
    rep = check_convexifiable(p)
    if not rep.convexifiable:
        raise CodesignError("; ".join(rep.reasons))
    A = float(p.amplitude)
    l = p.l
    delays = p.R.profile.delays
    N_P, D_P = p.plant.numerator, p.plant.denominator
    kappa = _rate_presolve(p.R, p.model, "stage 1")
    if p.O is not None:
        _rate_presolve(p.O, p.model, "stage 1")
    edges: tuple[Edge, ...] = ()

    if rep.naive:
        (kd,) = delays
        labels = tuple(f"d{j}*gamma({kd})" for j in range(p.s, -1, -1))
        basis = [(tuple(1.0 if i == j else 0.0 for i in range(p.s + 1)), {kd: 1.0}) for j in range(p.s + 1)]
    elif p.model == 2:
        labels = tuple(f"d0*gamma({k})" for k in delays)
        basis = [((1.0,), {k: (1.0 if k == kk else 0.0) for k in delays}) for kk in delays]
    else:
        classes = nw.sink_edge_classes(p.R.graph, p.R.sched)
        edges = p.R.graph.edges
        labels = tuple(f"d0*alpha({nw.edge_label(e)})" for e in edges)
        basis = [((1.0,), {k: (1.0 if classes.get(e) == k else 0.0) for k in delays}) for e in edges]

    Q = np.column_stack([_pad(q_coefficients(d, gam, N_P), l + 1) if any(gam.values()) else np.zeros(l + 1)
                         for d, gam in basis])
    Qu = np.column_stack([_pad(q_coefficients(d, gam, D_P), l + 1) if any(gam.values()) else np.zeros(l + 1)
                          for d, gam in basis])
    C = cumulative_matrix(l)
    B = (C @ Q)[:l]
    n = Q.shape[1]
    H = 2.0 * A * A * B.T @ B
    g = -2.0 * A * A * B.T @ np.ones(l)
    const = A * A * (p.reference_lead + l)
    A_eq = Q.sum(axis=0)[None, :]
    b_eq = np.ones(1)
    rows, rhs = [], []
    for bound, M in ((p.overshoot_y, C @ Q), (p.overshoot_u, C @ Qu)):
        if bound is None:
            continue
        rows += [A * M, -A * M]
        rhs += [np.full(l + 1, bound)] * 2

    stages = []
    signs = (1, -1) if (p.model == 1 and not rep.naive) else (1,)
    for sigma in signs:
        r_rows, r_rhs = list(rows), list(rhs)
        if p.model == 1 and not rep.naive:
            lower = -sigma * np.eye(n)
            r_rows.append(lower)
            r_rhs.append(np.full(n, -AMPLITUDE_FLOOR))
            if kappa is not None:
                # |beta_i| <= kappa |beta_j|, rows divided by kappa for conditioning; the
                # margin keeps the ceiling from rounding up at a tight ratio
                kap = kappa * (1.0 - RATE_MARGIN)
                pair = []
                for i in range(n):
                    for j in range(n):
                        if i != j:
                            row = np.zeros(n)
                            row[i] = sigma / kap
                            row[j] = -sigma
                            pair.append(row)
                if pair:
                    r_rows.append(np.array(pair))
                    r_rhs.append(np.zeros(len(pair)))
        A_in = np.vstack(r_rows) if r_rows else None
        b_in = np.concatenate(r_rhs) if r_rhs else None
        qp = QuadraticProgram(H, g, A_eq, b_eq, A_in, b_in, const)
        kind = "naive" if rep.naive else f"model{p.model}"
        stages.append(ConvexStage(kind, sigma, labels, qp, Q, Qu, l, A, p.reference_lead, edges, delays))
    return tuple(stages)


@dataclass(frozen=True)
class Stage1Result:
    status: str  # optimal | infeasible | unbounded
    stage: ConvexStage | None
    result: QPResult | None
    branches: tuple[QPResult, ...] = ()
    certificate: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.result.value if self.result is not None and self.result.ok else math.inf

    @property
    def x(self) -> np.ndarray | None:
        return None if self.result is None else self.result.x


def solve_stage1(p: CodesignProblem) -> Stage1Result:
    try:
        stages = build_stage1(p)
    except Infeasible as exc:
        return Stage1Result("infeasible", None, None, certificate={"presolve": exc.reason, **exc.certificate})
    results = [solve_qp(st.qp) for st in stages]
    best = None
    for st, res in zip(stages, results):
        if res.status == "unbounded":
            return Stage1Result("unbounded", st, res, tuple(results))
        if not res.ok:
            continue
        if best is None:
            best = (st, res)
            continue
        v0, v1 = best[1].value, res.value
        if v1 < v0 - 1e-12 * max(1.0, abs(v0)) or (
            abs(v1 - v0) <= 1e-12 * max(1.0, abs(v0)) and tuple(res.x) < tuple(best[1].x)
        ):
            best = (st, res)
    if best is None:
        cert = {f"branch{st.sign:+d}": r.certificate for st, r in zip(stages, results)}
        return Stage1Result("infeasible", None, None, tuple(results), cert)
    return Stage1Result("optimal", best[0], best[1], tuple(results))


def stage_gains(stage: ConvexStage, x) -> tuple[tuple[float, ...], dict[int, float]]:
    """Controller numerator ``d`` (highest power first) and controllability gains."""
    x = np.asarray(x, dtype=float)
    if stage.kind == "naive":
        (kd,) = stage.delays
        return tuple(x), {kd: 1.0}
    if stage.kind == "model2":
        return (1.0,), {k: float(v) for k, v in zip(stage.delays, x)}
    raise CodesignError("model-1 gains come from the recovered link amplitudes")


# ---------------------------------------------------------------------------
# stage 2


@dataclass(frozen=True)
class Stage2Result:
    ok: bool
    c: tuple[float, ...]
    gamma_O: dict[int, float] | None
    residual: float
    unknowns: int
    equations: int


def solve_stage2(p: CodesignProblem, d: Sequence[float], gamma_R: Mapping[int, float]) -> Stage2Result:
    """Solve the deadbeat identity for ``c`` (and ``gamma_O`` when it is free)."""
    N_R = nw.network_numerator(gamma_R, p.ddr)
    K0 = Polynomial(list(d)[::-1]) * N_R * p.plant.numerator
    m, r = p.m, p.plant.r
    top = m + r + 1
    Dp = p.plant.unstable_part_den
    lead = (Z - 1.0) * Dp
    cols = [lead.shift(j) for j in range(m - 1, -1, -1)]
    rhs = Polynomial.monomial(top) - lead.shift(m)
    free_O: tuple[int, ...] = ()
    if p.O is None:
        rhs = rhs - K0
    elif p.O.pinned:
        rhs = rhs - K0 * nw.network_numerator(p.O.pinned_gamma(), p.ddo)
    else:
        free_O = p.O.profile.delays
        cols += [K0.shift(p.ddo - i) for i in free_O]
    x, resid = solve_columns(cols, rhs, top, rcond=STAGE2_RCOND)
    ok = resid <= STAGE2_TOL * max(1.0, float(np.abs(rhs.coeffs).max()))
    gamma_O = {i: float(v) for i, v in zip(free_O, x[m:])} if free_O else (
        p.O.pinned_gamma() if p.O is not None else None)
    return Stage2Result(bool(ok), tuple(float(v) for v in x[:m]), gamma_O, float(resid), len(cols), top)


# ---------------------------------------------------------------------------
# weight recovery


def alpha_for_gamma_model1(g: RadioGraph, sched: Scheduling, gamma: Mapping[int, float]) -> dict[Edge, float]:
    """Link amplitudes realizing ``gamma`` under model 1 (needs delay separation).

    Each class total is split equally over its sink links; interior links get
    the geometric mean of the extreme sink magnitudes, which keeps the
    amplitude spread no larger than among the sink links.
    """
    classes = nw.sink_edge_classes(g, sched)
    count: dict[int, int] = {}
    for k in classes.values():
        count[k] = count.get(k, 0) + 1
    alpha = {e: float(gamma[k]) / count[k] for e, k in classes.items()}
    mags = [abs(a) for a in alpha.values()]
    if min(mags) == 0.0:
        raise nw.RateModelError("a delay class with zero gain leaves its links without data")
    mid = math.sqrt(min(mags) * max(mags))
    for e in g.edges:
        alpha.setdefault(e, mid)
    return alpha


def alpha_spread(alphas: Mapping) -> float:
    mags = [abs(a) for a in alphas.values()]
    return max(mags) / min(mags)


def design_weights(p: CodesignProblem, side: NetworkSide, gamma: Mapping[int, float],
                   sign_alpha: Mapping[Edge, float] | None = None) -> dict[Edge, float]:
    """Constructive weights for one network given its gains."""
    if side.weights is not None:
        return dict(side.weights)
    if p.model == 1:
        alpha = dict(sign_alpha) if sign_alpha is not None else alpha_for_gamma_model1(side.graph, side.sched, gamma)
        return nw.weights_from_alpha_links(side.graph, alpha)
    return nw.weights_from_gamma_model2(side.graph, side.sched, gamma, side.alpha_targets).weights


@dataclass(frozen=True)
class Recovery:
    d: tuple[float, ...]
    gamma_R: dict[int, float]
    weights_R: dict[Edge, float]
    weights_O: dict[Edge, float] | None


def recover_network_params(p: CodesignProblem, stage: ConvexStage, x, stage2: Stage2Result) -> Recovery:
    x = np.asarray(x, dtype=float)
    if stage.kind == "model1":
        alpha = {e: stage.sign * float(v) for e, v in zip(stage.edges, x)}
        W_R = nw.weights_from_alpha_links(p.R.graph, alpha)
        classes = nw.sink_edge_classes(p.R.graph, p.R.sched)
        gamma_R = {k: float(sum(alpha[e] for e, kk in classes.items() if kk == k)) for k in stage.delays}
        d = (float(stage.sign),)
    else:
        d, gamma_R = stage_gains(stage, x)
        W_R = design_weights(p, p.R, gamma_R) if p.R.weights is None else dict(p.R.weights)
    W_O = None
    if p.O is not None:
        W_O = design_weights(p, p.O, stage2.gamma_O)
    return Recovery(tuple(d), gamma_R, W_R, W_O)


# ---------------------------------------------------------------------------
# end-to-end evaluation


@dataclass
class Evaluation:
    controller: ControllerStructure
    gamma_R: dict[int, float]
    gamma_O: dict[int, float] | None
    metrics: StepMetrics
    deadbeat_residual: float
    rates_R: RateReport
    rates_O: RateReport | None
    constraints: dict[str, bool]

    @property
    def satisfied(self) -> bool:
        return all(self.constraints.values())


def element_rates(side: NetworkSide, weights: Mapping[Edge, float], model: int) -> RateReport:
    if model == 1:
        alphas = nw.totals(nw.alpha_links(side.graph, side.sched, weights))
        return nw.rates(alphas, side.quant, side.sched.slot_duration, 1)
    alphas = nw.totals(nw.alpha_nodes(side.graph, side.sched, weights))
    full = nw.rates(alphas, side.quant, side.sched.slot_duration, 2)
    # the controller-side node handles the quantized signal itself
    keep = {v for v in alphas if v != side.graph.source} or set(alphas)
    return RateReport(2, {v: full.alphas[v] for v in keep}, {v: full.bits[v] for v in keep},
                      {v: full.rates[v] for v in keep})


@dataclass(frozen=True)
class DesignLoop:
    controller: ControllerStructure
    loop: ClosedLoop
    profile_R: nw.DelayProfile
    profile_O: nw.DelayProfile | None
    G_R: RationalTF
    G_O: RationalTF | None
    deadbeat_residual: float


def design_loop(p: CodesignProblem, d: Sequence[float], c: Sequence[float],
                weights_R: Mapping[Edge, float], weights_O: Mapping[Edge, float] | None) -> DesignLoop:
    """Closed loop rebuilt from controller coefficients and link weights alone."""
    prof_R = nw.delay_profile(p.R.graph, p.R.sched, weights_R)
    G_R = nw.network_tf(prof_R, p.R.sched.frame_duration)
    G_O, prof_O = None, None
    if p.O is not None:
        prof_O = nw.delay_profile(p.O.graph, p.O.sched, weights_O)
        G_O = nw.network_tf(prof_O, p.O.sched.frame_duration)
    ctrl = ControllerStructure(p.plant.stable_part, prof_R.max_delay, 0 if prof_O is None else prof_O.max_delay,
                               len(d) - 1, tuple(c), tuple(d))
    resid_poly = deadbeat_constraint(ctrl, p.plant, G_R, G_O)
    cl = closed_loop(ctrl, p.plant, G_R, G_O)
    return DesignLoop(ctrl, cl, prof_R, prof_O, G_R, G_O, float(np.abs(resid_poly.coeffs).max()))


def evaluate_design(p: CodesignProblem, d: Sequence[float], c: Sequence[float],
                    weights_R: Mapping[Edge, float], weights_O: Mapping[Edge, float] | None) -> Evaluation:
    """Recompute every metric from the controller coefficients and the weights."""
    dl = design_loop(p, d, c, weights_R, weights_O)
    ctrl, resid, prof_R, prof_O = dl.controller, dl.deadbeat_residual, dl.profile_R, dl.profile_O
    metrics = step_metrics(dl.loop, p.amplitude, p.reference_lead)
    rates_R = element_rates(p.R, weights_R, p.model)
    rates_O = element_rates(p.O, weights_O, p.model) if p.O is not None else None
    cons = {"deadbeat": resid < STAGE2_TOL}
    if p.overshoot_y is not None:
        cons["overshoot_y"] = metrics.overshoot_y <= p.overshoot_y + 1e-6
    if p.overshoot_u is not None:
        cons["overshoot_u"] = metrics.overshoot_u <= p.overshoot_u + 1e-6
    for name, side, rep in (("rate_R", p.R, rates_R), ("rate_O", p.O, rates_O)):
        if side is not None and side.rate_bound is not None:
            allowed = math.floor(side.rate_bound * side.sched.slot_duration + 1e-9)
            cons[name] = max(rep.bits.values()) <= allowed
    return Evaluation(ctrl, dict(prof_R.gamma), None if prof_O is None else dict(prof_O.gamma),
                      metrics, resid, rates_R, rates_O, cons)


# ---------------------------------------------------------------------------
# driver


@dataclass
class CodesignSolution:
    status: str  # optimal | stage1_infeasible | stage1_unbounded | stage2_infeasible | not_convexifiable
    #              | recovery_failed | constraint_violated
    message: str = ""
    convexity: ConvexityReport | None = None
    stage1: Stage1Result | None = None
    stage2: Stage2Result | None = None
    recovery: Recovery | None = None
    evaluation: Evaluation | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"

    @property
    def lower_bound_sq(self) -> float:
        """Stage-1 optimum (a lower bound on the achievable quadratic norm)."""
        return self.stage1.value if self.stage1 is not None else math.nan

    @property
    def l2(self) -> float:
        if self.evaluation is not None:
            return self.evaluation.metrics.l2
        return math.inf

    @property
    def ranking_value(self) -> float:
        """Optimal norm when the design is realizable, otherwise infinity."""
        return self.l2 if self.feasible else math.inf


def codesign(p: CodesignProblem) -> CodesignSolution:
    if p.R.pinned:
        return codesign_pinned(p)
    rep = check_convexifiable(p)
    if not rep.convexifiable:
        return CodesignSolution("not_convexifiable", "; ".join(rep.reasons), rep)
    s1 = solve_stage1(p)
    diag = {"stage1_branches": [(r.status, r.iterations, r.kkt_residual) for r in s1.branches]}
    if s1.status != "optimal":
        return CodesignSolution(f"stage1_{s1.status}", str(s1.certificate.get("presolve", s1.status)), rep, s1,
                                diagnostics=diag)
    st, x = s1.stage, s1.x
    diag.update(qp_iterations=s1.result.iterations, kkt_residual=s1.result.kkt_residual,
                min_eigenvalue=st.min_eigenvalue)
    if st.kind == "model1":
        classes = nw.sink_edge_classes(p.R.graph, p.R.sched)
        gam = {k: st.sign * float(sum(v for e, v in zip(st.edges, x) if classes.get(e) == k)) for k in st.delays}
        d = (float(st.sign),)
    else:
        d, gam = stage_gains(st, x)
    s2 = solve_stage2(p, d, gam)
    diag["stage2_residual"] = s2.residual
    if not s2.ok:
        return CodesignSolution("stage2_infeasible",
                                f"deadbeat identity residual {s2.residual:.3e}; stage-1 value is a lower bound only",
                                rep, s1, s2, diagnostics=diag)
    try:
        rec = recover_network_params(p, st, x, s2)
        ev = evaluate_design(p, rec.d, s2.c, rec.weights_R, rec.weights_O)
    except (nw.GainTargetUnreachable, nw.RateModelError, nw.SingularityError, nw.NetworkError, DeadbeatInfeasible) as exc:
        return CodesignSolution("recovery_failed", str(exc), rep, s1, s2, diagnostics=diag)
    rel = abs(ev.metrics.l2_sq - s1.value) / max(1.0, abs(s1.value))
    diag["stage_consistency"] = rel
    diag["consistent"] = rel <= CONSISTENCY_RTOL
    bad = [k for k, v in ev.constraints.items() if not v]
    if bad == ["rate_O"]:
        # the observability amplitudes are a stage-2 output
        return CodesignSolution("stage2_infeasible", "observability rate bound violated by the gains stage 2 needs",
                                rep, s1, s2, rec, ev, diag)
    status = "optimal" if not bad else "constraint_violated"
    return CodesignSolution(status, f"violated: {bad}" if bad else "", rep, s1, s2, rec, ev, diag)


def codesign_pinned(p: CodesignProblem) -> CodesignSolution:
    """Fixed controllability gains: the deadbeat identity alone fixes ``(c, d)``."""
    if p.O is not None and not p.O.pinned:
        raise CodesignError("pinned controllability gains need a pinned or absent observability network")
    gam = p.R.pinned_gamma()
    G_R = nw.network_tf(p.R.profile.with_gamma(gam), p.R.sched.frame_duration)
    G_O = None
    if p.O is not None:
        G_O = nw.network_tf(p.O.profile.with_gamma(p.O.pinned_gamma()), p.O.sched.frame_duration)
    try:
        ctrl = solve_deadbeat(p.plant, G_R, G_O, s=p.s)
    except DeadbeatInfeasible as exc:
        return CodesignSolution("stage2_infeasible", str(exc))
    try:
        W_R = design_weights(p, p.R, gam)
        W_O = design_weights(p, p.O, p.O.pinned_gamma()) if p.O is not None else None
        ev = evaluate_design(p, ctrl.d, ctrl.c, W_R, W_O)
    except (nw.GainTargetUnreachable, nw.RateModelError, nw.SingularityError, nw.NetworkError) as exc:
        return CodesignSolution("recovery_failed", str(exc))
    rec = Recovery(ctrl.d, gam, W_R, W_O)
    bad = [k for k, v in ev.constraints.items() if not v]
    return CodesignSolution("optimal" if not bad else "constraint_violated", f"violated: {bad}" if bad else "",
                            None, None, None, rec, ev, {"mode": "pinned"})


# ---------------------------------------------------------------------------
# grid oracles


@dataclass(frozen=True)
class GridResult:
    value: float  # best quadratic norm found
    point: np.ndarray | None
    evaluated: int
    feasible: int
    cell_variation: float
    mode: str = ""


def grid_stage1(stage: ConvexStage, box: tuple[float, float] = (-100.0, 100.0), points: int = 400) -> GridResult:
    """Dense grid over the stage-1 affine subspace ``sum q = 1``."""
    qp = stage.qp
    n = qp.n
    if n > 3:
        raise CodesignError("grid oracle limited to three variables")
    a = qp.A_eq[0]
    piv = int(np.argmax(np.abs(a)))
    free = [i for i in range(n) if i != piv]
    axis = np.linspace(box[0], box[1], points)
    if free:
        mesh = np.meshgrid(*([axis] * len(free)), indexing="ij")
        Y = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        Y = np.zeros((1, 0))
    X = np.zeros((Y.shape[0], n))
    X[:, free] = Y
    X[:, piv] = (qp.b_eq[0] - Y @ a[free]) / a[piv]
    vals = 0.5 * np.einsum("ij,jk,ik->i", X, qp.H, X) + X @ qp.g + qp.const
    if qp.A_in.shape[0]:
        slack = qp.b_in[None, :] - X @ qp.A_in.T
        ok = np.all(slack >= -FEAS_TOL * max(1.0, np.abs(qp.b_in).max()), axis=1)
    else:
        ok = np.ones(X.shape[0], bool)
    if not ok.any():
        return GridResult(math.inf, None, X.shape[0], 0, math.nan, "stage1")
    masked = np.where(ok, vals, np.inf)
    best = int(np.argmin(masked))
    var = 0.0
    if free:
        shape = (points,) * len(free)
        idx = np.unravel_index(best, shape)
        grid_vals = vals.reshape(shape)
        for ax in range(len(free)):
            for step in (-1, 1):
                j = list(idx)
                j[ax] += step
                if 0 <= j[ax] < points:
                    var = max(var, abs(grid_vals[tuple(j)] - vals[best]))
    return GridResult(float(vals[best]), X[best], X.shape[0], int(ok.sum()), var, "stage1")


def _bconv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise convolution of two coefficient stacks."""
    out = np.zeros((a.shape[0], a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[1]):
        out[:, i:i + b.shape[1]] += a[:, i:i + 1] * b
    return out


def _class_spread(gam: np.ndarray, counts: np.ndarray) -> np.ndarray:
    per = np.abs(gam) / counts[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return per.max(axis=1) / per.min(axis=1)


def _trace_checks(p: CodesignProblem, q: np.ndarray, qu: np.ndarray, l: int):
    """Quadratic norm and overshoot feasibility for stacks of deadbeat responses."""
    A = p.amplitude
    C = cumulative_matrix(l)
    qq = np.zeros((q.shape[0], l + 1))
    qq[:, : min(l + 1, q.shape[1])] = q[:, : l + 1]
    uu = np.zeros((qu.shape[0], l + 1))
    uu[:, : min(l + 1, qu.shape[1])] = qu[:, : l + 1]
    y = A * qq @ C.T
    u = A * uu @ C.T
    e = y[:, :l] - A
    val = p.reference_lead * A * A + np.sum(e * e, axis=1)
    ok = np.abs(qq.sum(axis=1) - 1.0) <= 1e-9
    if p.overshoot_y is not None:
        ok &= np.abs(y).max(axis=1) <= p.overshoot_y + 1e-9
    if p.overshoot_u is not None:
        ok &= np.abs(u).max(axis=1) <= p.overshoot_u + 1e-9
    return val, ok


def brute_force_codesign(p: CodesignProblem, box: tuple[float, float] = (-500.0, 500.0),
                         points: int = 400) -> GridResult:
    """Exhaustive grid search for the full (non-relaxed) co-design problem.

    With a pinned or absent observability network the grid runs over the
    controllability gains and ``(c, d)`` is solved from the deadbeat identity
    at every point.  With a free observability network (``s = 0``) the grid
    runs over ``d0 * gamma_R`` restricted to ``sum q = 1`` and the identity is
    solved for ``(c, gamma_O)``.  Model-1 amplitudes use the equal split per
    delay class, with one common sign in the controllability network.
    """
    delays = p.R.profile.delays
    nvar = len(delays) + (p.s + 1 if (p.O is None or p.O.pinned) else 0)
    if nvar > 6 or len(delays) > 3:
        raise CodesignError("brute-force oracle is for desk-scale instances only")
    axis = np.linspace(box[0], box[1], points)
    r, m, l = p.plant.r, p.m, p.l
    top = m + r + 1
    Dp = p.plant.unstable_part_den
    lead = (Z - 1.0) * Dp
    N_P = p.plant.numerator.coeffs
    D_P = p.plant.denominator.coeffs
    ddr = p.ddr
    rhs = (Polynomial.monomial(top) - lead.shift(m)).padded(top)
    c_cols = np.column_stack([lead.shift(j).padded(top) for j in range(m - 1, -1, -1)]) if m else np.zeros((top, 0))

    def nr_stack(G):  # rows: ascending numerator coefficients of N_GR
        out = np.zeros((G.shape[0], ddr))
        for col, k in enumerate(delays):
            out[:, ddr - k] += G[:, col]
        return out

    kappa_R = kappa_O = None
    if p.R.rate_bound is not None:
        try:
            kappa_R = _rate_presolve(p.R, p.model, "oracle")
            kappa_O = _rate_presolve(p.O, p.model, "oracle") if p.O is not None else None
        except Infeasible:
            return GridResult(math.inf, None, 0, 0, math.nan, "presolve")

    if p.O is None or p.O.pinned:
        mode = "gains"
        mesh = np.meshgrid(*([axis] * len(delays)), indexing="ij")
        G = np.stack([mm.ravel() for mm in mesh], axis=1)
        NO = nw.network_numerator(p.O.pinned_gamma(), p.ddo).coeffs if p.O is not None else np.ones(1)
        K = _bconv(_bconv(nr_stack(G), N_P[None, :]), NO[None, :])
        cols = []
        for j in range(p.s, -1, -1):
            col = np.zeros((G.shape[0], top))
            w = min(top - j, K.shape[1])
            col[:, j:j + w] = K[:, :w]
            cols.append(col)
        Dcols = np.stack(cols, axis=2)  # (N, top, s+1)
        full = np.concatenate([np.broadcast_to(c_cols, (G.shape[0],) + c_cols.shape), Dcols], axis=2)
        sol = np.einsum("nij,j->ni", np.linalg.pinv(full, rcond=STAGE2_RCOND), rhs)
        res = np.abs(np.einsum("nij,nj->ni", full, sol) - rhs).max(axis=1)
        ok = res <= STAGE2_TOL * max(1.0, np.abs(rhs).max())
        dstack = sol[:, m:][:, ::-1]  # ascending d
        fwd = _bconv(dstack, nr_stack(G))
        q = _bconv(fwd, N_P[None, :])
        qu = _bconv(fwd, D_P[None, :])
        val, ok2 = _trace_checks(p, q, qu, l)
        ok &= ok2
        if p.model == 1 and kappa_R is not None:
            classes = nw.sink_edge_classes(p.R.graph, p.R.sched)
            counts = np.array([sum(1 for k in classes.values() if k == kk) for kk in delays], float)
            ok &= _class_spread(G, counts) <= kappa_R * (1 + 1e-12)
        pts = np.concatenate([G, sol], axis=1)
    else:
        if p.s != 0:
            raise CodesignError("free observability gains need a single controller numerator coefficient")
        mode = "scaled"
        sumq = float(np.sum(N_P))
        nR = len(delays)
        if nR == 1:
            T = np.array([[1.0 / sumq]])
        else:
            mesh = np.meshgrid(*([axis] * (nR - 1)), indexing="ij")
            free = np.stack([mm.ravel() for mm in mesh], axis=1)
            T = np.concatenate([free, (1.0 / sumq - free.sum(axis=1))[:, None]], axis=1)
        nrs = nr_stack(T)
        q = _bconv(nrs, N_P[None, :])
        qu = _bconv(nrs, D_P[None, :])
        val, ok = _trace_checks(p, q, qu, l)
        Ocols = []
        for i in p.O.profile.delays:
            col = np.zeros((T.shape[0], top))
            sh = p.ddo - i
            w = min(top - sh, q.shape[1])
            col[:, sh:sh + w] = q[:, :w]
            Ocols.append(col)
        full = np.concatenate([np.broadcast_to(c_cols, (T.shape[0],) + c_cols.shape),
                               np.stack(Ocols, axis=2)], axis=2)
        sol = np.einsum("nij,j->ni", np.linalg.pinv(full, rcond=STAGE2_RCOND), rhs)
        res = np.abs(np.einsum("nij,nj->ni", full, sol) - rhs).max(axis=1)
        ok &= res <= STAGE2_TOL * max(1.0, np.abs(rhs).max())
        if p.model == 1:
            classes = nw.sink_edge_classes(p.R.graph, p.R.sched)
            counts = np.array([sum(1 for k in classes.values() if k == kk) for kk in delays], float)
            same_sign = np.all(T > AMPLITUDE_FLOOR, axis=1) | np.all(T < -AMPLITUDE_FLOOR, axis=1)
            ok &= same_sign
            if kappa_R is not None:
                ok &= _class_spread(T, counts) <= kappa_R * (1 + 1e-12)
            if kappa_O is not None:
                oc = nw.sink_edge_classes(p.O.graph, p.O.sched)
                ocounts = np.array([sum(1 for k in oc.values() if k == kk) for kk in p.O.profile.delays], float)
                gO = sol[:, m:]
                ok &= _class_spread(gO, ocounts) <= kappa_O * (1 + 1e-12)
        pts = np.concatenate([T, sol], axis=1)
    if not ok.any():
        return GridResult(math.inf, None, int(ok.size), 0, math.nan, mode)
    masked = np.where(ok, val, np.inf)
    best = int(np.argmin(masked))
    return GridResult(float(val[best]), pts[best], int(ok.size), int(ok.sum()), math.nan, mode)
