import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcn_codesign import network as nw
from mcn_codesign.fixtures import QUANT_U, example3_problem, example4_problem, mesh_graph, schedule, unstable_plant
from mcn_codesign.network import QuantizationSpec, RadioGraph, Scheduling
from mcn_codesign.optimize import (
    CodesignProblem,
    NetworkSide,
    brute_force_codesign,
    build_stage1,
    check_convexifiable,
    codesign,
    grid_stage1,
    solve_stage1,
    solve_stage2,
    stage_gains,
)
from mcn_codesign.synthesis import l2_closed_form

from instances import Q, ladder, one_slot, random_problem


def diamond_side():
    g = RadioGraph(("s", "a", "b", "c", "t"), (("s", "a"), ("s", "b"), ("a", "c"), ("b", "c"), ("c", "t")), "s", "t")
    sched = Scheduling.from_assignment({("s", "a"): 1, ("a", "c"): 2, ("s", "b"): 2, ("b", "c"): 1, ("c", "t"): 3},
                                       0.01)
    return NetworkSide(g, sched, Q)


def chain_side(kind="controllability", period=1):
    g = RadioGraph(("a", "b"), (("a", "b"),), "a", "b", kind)
    return NetworkSide(g, one_slot(g, period), Q)


# --- convexity conditions --------------------------------------------------


def test_single_delays_are_naive():
    p = CodesignProblem(unstable_plant(), chain_side(), chain_side("observability"), model=1)
    rep = check_convexifiable(p)
    assert rep.convexifiable and rep.naive and rep.path == "naive"


def test_model2_with_enough_sensing_delays():
    O = NetworkSide(ladder([1, 2]), one_slot(ladder([1, 2]), 2), Q)
    p = CodesignProblem(unstable_plant(), NetworkSide(mesh_graph(), schedule([[12, 13, 14, 57, 67],
                                                                              [25, 27, 35, 36, 37, 46, 47]]), Q),
                        O, model=2)
    rep = check_convexifiable(p)
    assert rep.convexifiable and rep.path == "model2" and rep.stage2_guaranteed


def test_model1_merge_is_reported():
    p = CodesignProblem(unstable_plant(), diamond_side(), None, model=1)
    rep = check_convexifiable(p)
    assert not rep.convexifiable
    assert rep.separation_R.node == "c"
    assert codesign(p).status == "not_convexifiable"


def test_numerator_degree_blocks_relaxation():
    p = replace(example3_problem(None), s=1)
    rep = check_convexifiable(p)
    assert not rep.convexifiable


# --- stage 1 ----------------------------------------------------------------


def test_example3_free_stage_is_two_variable_qp():
    p = example3_problem(None)
    (stage,) = build_stage1(p)
    assert stage.kind == "model2" and stage.qp.n == 2
    assert stage.min_eigenvalue >= -1e-12
    s1 = solve_stage1(p)
    grid = grid_stage1(stage, (-10, 10), 2001)
    assert s1.value <= grid.value + 1e-9
    assert grid.value - s1.value <= grid.cell_variation + 1e-9
    # stage 2 has nothing to absorb the remainder without a sensing network
    assert codesign(p).status == "stage2_infeasible"


def test_single_delay_value_by_hand():
    # P = 1/(z + 3) behind one unit delay: sum q = 1 pins d0 = 1 and the
    # output is the reference delayed by two samples
    p = CodesignProblem(unstable_plant(), chain_side(), None, model=2, reference_lead=0, amplitude=1.5)
    (stage,) = build_stage1(p)
    assert stage.qp.n == 1 and stage.l == 2
    s1 = solve_stage1(p)
    assert s1.x[0] == pytest.approx(1.0)
    assert s1.value == pytest.approx(2 * 1.5**2)
    # (z - 1)(z + 3) + d0 = z^2 has no solution: nothing cancels the z term
    assert codesign(p).status == "stage2_infeasible"


def test_stage1_is_lower_bound_and_tight_when_consistent():
    rng = np.random.default_rng(11)
    for _ in range(30):
        p = random_problem(rng)
        sol = codesign(p)
        if not sol.feasible:
            continue
        assert sol.lower_bound_sq <= sol.evaluation.metrics.l2_sq * (1 + 1e-9) + 1e-12
        if sol.diagnostics["consistent"]:
            assert sol.l2 ** 2 == pytest.approx(sol.lower_bound_sq, rel=1e-6)


def test_infeasible_overshoot_has_certificate():
    p = CodesignProblem(unstable_plant(), chain_side(), None, model=2, overshoot_y=0.0)
    sol = codesign(p)
    assert sol.status == "stage1_infeasible"
    assert any(v.get("verified") for v in sol.stage1.certificate.values() if isinstance(v, dict))


# --- stage 2 and recovery ----------------------------------------------------


def test_stage2_on_case1_gains():
    p = example3_problem(1)
    sol = codesign(p)
    s2 = solve_stage2(p, sol.evaluation.controller.d, {1: 450.0, 2: 0.003})
    assert s2.ok and s2.residual < 1e-10
    assert np.allclose(s2.c, sol.evaluation.controller.c, atol=1e-9)


def test_case2_rates():
    sol = codesign(example3_problem(2))
    assert sol.feasible
    assert max(sol.evaluation.rates_R.rates.values()) == 1400.0


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_recovered_weights_realize_gains(seed):
    p = random_problem(np.random.default_rng(seed))
    sol = codesign(p)
    if sol.recovery is None:
        return
    prof = nw.delay_profile(p.R.graph, p.R.sched, sol.recovery.weights_R)
    _, gam = stage_gains(sol.stage1.stage, sol.stage1.x)
    for k, v in gam.items():
        assert prof.gamma[k] == pytest.approx(v, rel=1e-9, abs=1e-9)
    if p.O is not None:
        prof_o = nw.delay_profile(p.O.graph, p.O.sched, sol.recovery.weights_O)
        for k, v in sol.stage2.gamma_O.items():
            assert prof_o.gamma[k] == pytest.approx(v, rel=1e-9, abs=1e-9)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 50.0), st.floats(1.0, 50.0))
def test_feasible_solutions_respect_bounds(seed, oy, ou):
    p = replace(random_problem(np.random.default_rng(seed)), overshoot_y=oy, overshoot_u=ou)
    sol = codesign(p)
    if not sol.feasible:
        return
    m = sol.evaluation.metrics
    assert m.overshoot_y <= oy * (1 + 1e-9)
    assert m.overshoot_u <= ou * (1 + 1e-9)
    assert sol.evaluation.deadbeat_residual < 1e-8


def test_rate_bounds_respected_example4():
    for which in "abc":
        sol = codesign(example4_problem(which, 2000.0))
        if sol.feasible:
            ev = sol.evaluation
            assert max(ev.rates_R.rates.values()) <= 2000.0
            assert max(ev.rates_O.rates.values()) <= 2000.0


def test_model1_quantizer_scale_invariance():
    base = example4_problem("a", 2000.0)
    k = 8.0
    scaled_q = QuantizationSpec(QUANT_U.delta * k, QUANT_U.max_value * k)
    scaled = replace(base, R=replace(base.R, quant=scaled_q), O=replace(base.O, quant=scaled_q))
    a, b = codesign(base), codesign(scaled)
    assert a.status == b.status
    assert a.ranking_value == pytest.approx(b.ranking_value, rel=1e-9)


# --- oracles -----------------------------------------------------------------


def test_brute_force_beats_reference_design():
    res = brute_force_codesign(example3_problem(1), points=200)
    assert math.sqrt(res.value) <= 6.245 * 1.02
    assert res.mode == "gains"


@settings(max_examples=12)
@given(st.integers(0, 2**32 - 1))
def test_stage1_never_above_grid(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    for stage in build_stage1(p):
        if stage.qp.n > 3:
            return
        grid = grid_stage1(stage, (-20, 20), 120 if stage.qp.n == 3 else 801)
        s1 = solve_stage1(p)
        if math.isfinite(grid.value):
            assert s1.value <= grid.value + 1e-7 * max(1.0, grid.value)


def test_closed_form_agrees_with_stage_objective():
    rng = np.random.default_rng(5)
    from instances import synthesized_loop

    for _ in range(20):
        p = random_problem(rng)
        sol = codesign(p)
        if sol.stage2 is None or not sol.stage2.ok:
            continue
        *_, cl = synthesized_loop(p, sol)
        assert l2_closed_form(cl, p.amplitude, p.reference_lead) == pytest.approx(sol.stage1.value, rel=1e-8)
