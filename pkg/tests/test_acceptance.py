"""Acceptance gate: one PASS/FAIL line per criterion, printed at the end of the module."""

import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from mcn_codesign import network as nw
from mcn_codesign.cli import main
from mcn_codesign.fixtures import (
    QUANT_U,
    SCHEDULES,
    example3_problem,
    example4_problem,
    mesh_graph,
    mesh_uniform,
    schedule,
    unstable_plant,
)
from mcn_codesign.network import QuantizationSpec, RadioGraph
from mcn_codesign.optimize import CodesignProblem, NetworkSide, build_stage1, codesign, grid_stage1
from mcn_codesign.qp import solve_qp
from mcn_codesign.scheduler import find_plateau, is_non_increasing, parse_sweep, rate_sweep, schedule_search
from mcn_codesign.synthesis import deadbeat_constraint, l2_closed_form, l2_simulated, step_response

from instances import Q, one_slot, random_dag, solved_instances, synthesized_loop

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
LINES: list[str] = []


@pytest.fixture(scope="module", autouse=True)
def gate_summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    write = tr.write_line if tr is not None else print
    write("")
    write("acceptance summary")
    for line in LINES:
        write(line)


def record(name: str, checks: dict[str, tuple[bool, str]]):
    ok = all(c for c, _ in checks.values())
    detail = "; ".join(f"{k}: {msg}{'' if c else ' [miss]'}" for k, (c, msg) in checks.items())
    line = f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})"
    LINES.append(line)
    print(line)
    assert ok, line


def within(x, target, rel):
    return abs(x - target) <= rel * abs(target)


def test_example1_transfer_functions(tmp_path):
    checks = {}
    for name, num, total in (("a", [1.0], 0.03), ("b", [0.6, 0.4], 0.02)):
        out = tmp_path / name
        code = main(["analyze", "--config", str(CONFIGS / f"example1_eta_{name}.json"), "--out", str(out)])
        net = json.loads((out / "report.json").read_text())["networks"]["controllability"]
        got_num, got_den = np.array(net["tf_num"]), np.array(net["tf_den"])
        want_den = np.zeros(len(num) + 1)
        want_den[0] = 1.0
        shape_ok = code == 0 and got_num.size == len(num) and got_den.size == want_den.size
        err = max(np.abs(got_num - num).max(), np.abs(got_den - want_den).max()) if shape_ok else math.inf
        delay = net["total_delay_s"]
        checks[f"G^{name}"] = (err <= 1e-12 and math.isclose(delay, total, rel_tol=1e-12),
                              f"num={got_num.tolist()} err={err:.1e} delay={delay * 1e3:g} ms")
    record("Example 1 transfer functions", checks)


def test_example3_case1():
    t0 = time.perf_counter()
    sol = codesign(example3_problem(1))
    elapsed = time.perf_counter() - t0
    m = sol.evaluation.metrics
    rate = sol.evaluation.rates_R.rates["v2"]
    record("Example 3 Case 1", {
        "L2": (within(m.l2, 6.245, 5e-3), f"{m.l2:.6g}"),
        "O_y": (within(m.overshoot_y, 7.0, 1e-2), f"{m.overshoot_y:.6g}"),
        "R_v2": (rate == 3100.0, f"{rate:g} Hz"),
        "runtime": (elapsed < 1.0, f"{elapsed:.3f} s"),
    })


def test_example3_case2():
    sol = codesign(example3_problem(2))
    m = sol.evaluation.metrics
    rate = max(sol.evaluation.rates_R.rates.values())
    record("Example 3 Case 2", {
        "L2": (within(m.l2, 13.5508, 5e-3), f"{m.l2:.6g}"),
        "O_y": (within(m.overshoot_y, 502.5, 1e-2), f"{m.overshoot_y:.6g} vs 502.5"),
        "rate": (rate == 1400.0, f"{rate:g} Hz"),
    })


def test_deadbeat_suite():
    worst = dict(residual=0.0, tail=0.0, qsum=0.0, l2=0.0)
    for p, sol in solved_instances(2024, 200):
        ctrl, G_R, G_O, cl = synthesized_loop(p, sol)
        A = p.amplitude
        worst["residual"] = max(worst["residual"], float(np.abs(deadbeat_constraint(ctrl, p.plant, G_R, G_O).coeffs).max()))
        tr = step_response(cl, A, cl.l + 20)
        worst["tail"] = max(worst["tail"], float(np.abs(tr.e[cl.l:]).max()) / A)
        worst["qsum"] = max(worst["qsum"], abs(float(np.sum(cl.q)) - 1.0))
        cf, sim = l2_closed_form(cl, A, p.reference_lead), l2_simulated(cl, A, p.reference_lead)
        worst["l2"] = max(worst["l2"], abs(cf - sim) / max(abs(sim), 1e-300))
    record("Deadbeat suite (200 instances)", {
        "residual": (worst["residual"] < 1e-8, f"{worst['residual']:.1e}"),
        "e(k>=l)/A": (worst["tail"] <= 1e-9, f"{worst['tail']:.1e}"),
        "sum q": (worst["qsum"] <= 1e-9, f"{worst['qsum']:.1e}"),
        "closed vs simulated": (worst["l2"] <= 1e-9, f"{worst['l2']:.1e}"),
    })


def small_fixtures():
    chain = RadioGraph(("a", "b"), (("a", "b"),), "a", "b")
    yield "single link", CodesignProblem(unstable_plant(), NetworkSide(chain, one_slot(chain, 1), Q), None, 2)
    yield "Example 3 free gains", example3_problem(None)
    for w in "abc":
        yield f"Example 4 {w} (gains)", example4_problem(w, 3000.0, model=2)
        yield f"Example 4 {w} (gains, unbounded rate)", example4_problem(w, None, model=2, overshoot=None)


def test_solver_oracle_equivalence():
    t0 = time.perf_counter()
    checks = {}
    for name, p in small_fixtures():
        for stage in build_stage1(p):
            if stage.qp.n > 3:
                continue
            res = solve_qp(stage.qp)
            grid = grid_stage1(stage, (-100.0, 100.0), 400)
            gap = abs(res.value - grid.value)
            tol = max(1e-3 * abs(grid.value), grid.cell_variation)
            checks[f"{name} n={stage.qp.n}"] = (res.ok and gap <= tol,
                                                f"qp={res.value:.6g} grid={grid.value:.6g}")
    elapsed = time.perf_counter() - t0
    checks["runtime"] = (elapsed < 60.0, f"{elapsed:.1f} s")
    record("Solver/oracle equivalence", checks)


def test_constructive_round_trips():
    rng = np.random.default_rng(7)
    worst_links = 0.0
    for _ in range(100):
        g = random_dag(rng, int(rng.integers(2, 13)))
        target = {e: float(rng.uniform(0.1, 10.0) * rng.choice([-1, 1])) for e in g.edges}
        w = nw.weights_from_alpha_links(g, target)
        back = nw.totals(nw.alpha_links(g, one_slot(g, 1), w))
        worst_links = max(worst_links, max(abs(back[e] - t) / abs(t) for e, t in target.items()))
    worst_m2 = 0.0
    g = mesh_graph()
    for name in ("ex1_a", "ex1_b", "ex4_a", "ex4_b", "ex4_c"):
        sched = schedule(SCHEDULES[name])
        delays = nw.delay_profile(mesh_uniform(), sched, mesh_uniform().weights).delays
        for _ in range(5):
            gamma = {k: float(rng.uniform(0.2, 5.0) * rng.choice([-1, 1])) for k in delays}
            alpha = {v: float(rng.uniform(0.2, 5.0)) for v in g.interior}
            des = nw.weights_from_gamma_model2(g, sched, gamma, alpha)
            prof = nw.delay_profile(g, sched, des.weights)
            got = nw.totals(nw.alpha_nodes(g, sched, des.weights))
            errs = [abs(prof.gamma[k] - v) / abs(v) for k, v in gamma.items()]
            errs += [abs(got[v] - a) / a for v, a in alpha.items()]
            worst_m2 = max(worst_m2, max(errs))
    record("Constructive round trips", {
        "link amplitudes (100 graphs)": (worst_links <= 1e-10, f"{worst_links:.1e}"),
        "model-2 gains and node amplitudes": (worst_m2 <= 1e-10, f"{worst_m2:.1e}"),
    })


def test_example4_qualitative():
    t0 = time.perf_counter()
    p = example4_problem("a", 3000.0)
    res = schedule_search(p, [schedule(SCHEDULES[f"ex4_{w}"]) for w in "abc"])
    la, lb, lc = (e.l2 for e in res.evaluated)
    bounds = parse_sweep("1500:3000:100")
    checks = {"ranking a<=c<=b": (la <= lc <= lb, f"a={la:.10g} c={lc:.10g} b={lb:.10g}")}
    for w in "abc":
        vals = [pt.l2 for pt in rate_sweep(example4_problem(w, 3000.0), bounds)]
        start = find_plateau(vals)
        checks[f"sweep {w} non-increasing"] = (is_non_increasing(vals), f"plateau from {bounds[start]:g} Hz"
                                               if start is not None else "no plateau")
        if w == "a":
            checks["plateau a"] = (start is not None, "found" if start is not None else "missing")
    elapsed = time.perf_counter() - t0
    checks["runtime"] = (elapsed < 300.0, f"{elapsed:.1f} s")
    record("Example 4 ranking and sweeps", checks)


def reference_bits(levels: Fraction, ratio: Fraction) -> int:
    """ceil(log2(x)) for x >= 1 through the integer ceiling of x."""
    x = levels * ratio
    n = -((-x.numerator) // x.denominator)
    return (n - 1).bit_length()


def test_rate_exactness():
    rng = np.random.default_rng(99)
    mismatches = 0
    cases = 0
    for i in range(1000):
        if i % 4 == 0:
            # exact powers of two and their floating-point neighbours
            delta = 2.0 ** int(rng.integers(-6, 2))
            umax = delta * 2.0 ** int(rng.integers(0, 10))
            base = 2.0 ** int(rng.integers(-5, 5))
            top = base * 2.0 ** int(rng.integers(0, 12))
            top = [top, np.nextafter(top, np.inf), np.nextafter(top, 0.0)][i % 3]
            alphas = {"lo": base, "hi": top}
        else:
            delta = float(rng.uniform(1e-3, 1.0))
            umax = float(rng.uniform(1.0, 1e3))
            alphas = {f"e{j}": float(rng.uniform(1e-4, 1e3) * rng.choice([-1, 1])) for j in range(4)}
        try:
            q = QuantizationSpec(delta, umax)
        except ValueError:
            continue
        rep = nw.rates(alphas, q, 0.01, 1 + i % 2)
        levels = 2 * Fraction(umax) / Fraction(delta)
        low = min(abs(Fraction(a)) for a in alphas.values())
        for k, a in alphas.items():
            cases += 1
            want = reference_bits(levels, abs(Fraction(a)) / low)
            if rep.bits[k] != want or rep.rates[k] != want / 0.01:
                mismatches += 1
    record("Rate-model exactness", {"bit mismatches": (mismatches == 0, f"{mismatches} of {cases}")})
