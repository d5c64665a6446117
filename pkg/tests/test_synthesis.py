import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mcn_codesign import network as nw
from mcn_codesign.fixtures import SCHEDULES, example3_problem, mesh_graph, schedule, unstable_plant
from mcn_codesign.optimize import codesign
from mcn_codesign.poly import ONE, Z, Polynomial, RationalTF, split_stable
from mcn_codesign.synthesis import (
    ClosedLoop,
    ControllerStructure,
    DeadbeatInfeasible,
    StructureError,
    closed_loop,
    core_degree,
    deadbeat_constraint,
    l2_closed_form,
    l2_error,
    l2_simulated,
    overshoot,
    q_coefficients,
    solve_deadbeat,
    step_metrics,
    step_response,
)

from instances import random_plant


def example3_loop(g1, g2):
    G_R = nw.network_tf(nw.DelayProfile((1, 2), {1: (), 2: ()}, {1: g1, 2: g2}))
    plant = unstable_plant()
    ctrl = solve_deadbeat(plant, G_R, s=1)
    return plant, G_R, ctrl, closed_loop(ctrl, plant, G_R)


def test_degree_balance():
    assert core_degree(1, 0, 2, 0) == 2
    with pytest.raises(StructureError):
        core_degree(0, 0, 0, 0)
    with pytest.raises(StructureError):
        ControllerStructure(ONE, 2, 0, 1, (0.0,), (1.0, 1.0))
    with pytest.raises(StructureError):
        ControllerStructure(ONE, 2, 0, 1, (0.0, 0.0), (1.0,))


def test_controller_form():
    M = Z - 0.5
    ctrl = ControllerStructure(M, 1, 1, 0, (0.2, 0.3), (2.0,))
    C = ctrl.tf()
    assert C.num.allclose(M * Z * Z * 2.0)
    assert C.den.allclose((Z - 1) * Polynomial([0.3, 0.2, 1.0]))


def test_example3_identity_exact():
    plant, G_R, ctrl, cl = example3_loop(450.0, 0.003)
    res = deadbeat_constraint(ctrl, plant, G_R)
    assert np.abs(res.coeffs).max() < 1e-10
    assert cl.char.allclose(Polynomial.monomial(4), atol=1e-10)
    assert ctrl.m + plant.r + 1 == 4 and len(ctrl.c) + len(ctrl.d) == 4


def test_zero_numerator_residual():
    plant = unstable_plant()
    G_R = nw.network_tf(nw.DelayProfile((1,), {1: ()}, {1: 1.0}))
    ctrl = ControllerStructure(ONE, 1, 0, 0, (), (0.0,))
    res = deadbeat_constraint(ctrl, plant, G_R)
    want = (Z - 1) * (Z + 3) - Polynomial.monomial(2)
    assert res.allclose(want)
    assert not res.is_zero()


@given(st.integers(0, 2**32 - 1))
def test_residual_matches_convolution(seed):
    rng = np.random.default_rng(seed)
    plant = random_plant(rng)
    ddr, ddo, s = int(rng.integers(1, 4)), int(rng.integers(0, 3)), int(rng.integers(0, 3))
    m = core_degree(s, plant.stable_part.degree, ddr, ddo)
    c, d = rng.normal(size=m), rng.normal(size=s + 1)
    nR, nO = rng.normal(size=ddr), rng.normal(size=max(ddo, 1))
    G_R = RationalTF(Polynomial(nR), Polynomial.monomial(ddr))
    G_O = RationalTF(Polynomial(nO), Polynomial.monomial(ddo)) if ddo else None
    ctrl = ControllerStructure(plant.stable_part, ddr, ddo, s, c, d)
    got = deadbeat_constraint(ctrl, plant, G_R, G_O)
    dc = np.convolve([-1.0, 1.0], np.concatenate([c[::-1], [1.0]]))
    lhs = np.convolve(dc, plant.unstable_part_den.coeffs)
    fwd = np.convolve(np.convolve(d[::-1], Polynomial(nR).coeffs), plant.numerator.coeffs)
    if ddo:
        fwd = np.convolve(fwd, Polynomial(nO).coeffs)
    top = m + plant.r + 1
    want = np.zeros(top + 1)
    want[: lhs.size] += lhs
    want[: fwd.size] += fwd
    want[top] -= 1.0
    assert np.allclose(got.padded(top + 1), want, atol=1e-9 * max(1.0, np.abs(want).max()))


def test_q_example3_shape():
    q = q_coefficients([2.0], {1: 0.7, 2: 0.3}, ONE)
    assert np.allclose(q, [2.0 * 0.3, 2.0 * 0.7])


def test_q_single_delay():
    assert np.allclose(q_coefficients([1.0], {1: 1.0}, ONE), [1.0])


@given(st.integers(0, 2**32 - 1))
def test_q_matches_convolution(seed):
    rng = np.random.default_rng(seed)
    ddr = int(rng.integers(1, 4))
    delays = sorted(set(rng.integers(1, ddr + 1, 3).tolist()) | {ddr})
    gamma = {k: float(rng.normal()) for k in delays}
    d = rng.normal(size=int(rng.integers(1, 3)))
    N_P = Polynomial(rng.normal(size=int(rng.integers(1, 3))))
    q = q_coefficients(d, gamma, N_P)
    want = (Polynomial(d[::-1]) * nw.network_numerator(gamma, ddr) * N_P).coeffs
    n = max(q.size, want.size)
    assert np.allclose(np.pad(q, (0, n - q.size)), np.pad(want, (0, n - want.size)), atol=1e-12)


# --- time response ------------------------------------------------------------


def test_example3_case1_trace():
    _, _, _, cl = example3_loop(450.0, 0.003)
    tr = step_response(cl, 1.0, 10)
    assert np.all(tr.y[:2] == 0.0)
    assert np.allclose(tr.y[cl.l:], 1.0, atol=1e-9)
    assert np.abs(tr.y).max() == pytest.approx(7.0, rel=1e-2)
    assert cl.nu == 2 and cl.l == 4


def test_horizon_precondition():
    _, _, _, cl = example3_loop(1.0, 1.0)
    with pytest.raises(ValueError):
        step_response(cl, 1.0, cl.l - 1)
    assert step_response(cl, 1.0, cl.l).k.size == cl.l


def test_zero_amplitude_is_silent():
    _, _, _, cl = example3_loop(1.0, 1.0)
    tr = step_response(cl, 0.0, 12, 1)
    assert not np.any(tr.y) and not np.any(tr.u) and not np.any(tr.e)


def test_reference_lead_prefix():
    _, _, _, cl = example3_loop(1.0, 1.0)
    tr = step_response(cl, 2.0, 8, 3)
    assert list(tr.k[:4]) == [-3, -2, -1, 0]
    assert np.all(tr.e[:3] == -2.0)


@pytest.mark.parametrize("nu", [1, 2, 5])
@pytest.mark.parametrize("A", [1.0, 2.5])
def test_pure_delay_norm(nu, A):
    delay = RationalTF(ONE, Polynomial.monomial(nu))
    cl = ClosedLoop(delay, delay, Polynomial.monomial(nu), nu, nu, np.array([1.0]), np.array([1.0]))
    assert l2_closed_form(cl, A, 0) == pytest.approx(nu * A * A)
    assert l2_simulated(cl, A, 0) == pytest.approx(nu * A * A)


@pytest.mark.parametrize("g1,g2,want", [(450.0, 0.003, 6.245), (1.0, 1.0, 13.5508)])
def test_example3_norms(g1, g2, want):
    _, _, _, cl = example3_loop(g1, g2)
    assert l2_error(cl, 1.0) == pytest.approx(want, rel=5e-3)
    assert math.sqrt(l2_simulated(cl, 1.0)) == pytest.approx(l2_error(cl, 1.0), rel=1e-9)


@given(st.floats(1.0, 2.95))
def test_overshoot_closed_form(g2):
    _, _, _, cl = example3_loop(1.0, g2)
    oy, _ = overshoot(cl)
    assert oy == pytest.approx((20 * g2**2 + 20 * g2 + 3) / (-g2**2 + 2 * g2 + 3), rel=1e-9)


def test_overshoot_diverges_near_cancellation():
    values = [overshoot(example3_loop(1.0, g2)[3])[0] for g2 in (2.9, 2.99, 2.999)]
    assert values[0] < values[1] < values[2] and values[2] > 5e4
    with pytest.raises(DeadbeatInfeasible):
        example3_loop(1.0, 3.0)


@given(st.integers(0, 2**32 - 1))
def test_relative_degree_matches_first_output(seed):
    rng = np.random.default_rng(seed)
    plant = random_plant(rng)
    ddr = int(rng.integers(1, 4))
    delays = sorted(set(rng.integers(1, ddr + 1, 2).tolist()) | {ddr})
    gamma = {k: float(rng.uniform(0.5, 2.0)) for k in delays}
    G_R = nw.network_tf(nw.DelayProfile(tuple(delays), {k: () for k in delays}, gamma))
    try:
        ctrl = solve_deadbeat(plant, G_R)
    except DeadbeatInfeasible:
        assume(False)
    cl = closed_loop(ctrl, plant, G_R)
    assume(abs(ctrl.d[0]) > 1e-6)
    tr = step_response(cl, 1.0, cl.l + 4)
    first = int(np.nonzero(np.abs(tr.y) > 1e-12)[0][0])
    assert first == cl.nu
    if plant.n - plant.numerator.degree == 1:
        assert cl.nu == min(delays) + 1


def test_metrics_record():
    p = example3_problem(1)
    sol = codesign(p)
    m = sol.evaluation.metrics
    assert m.response_time == 4 and m.settled_at <= 4
    assert m.l2 == pytest.approx(6.245, rel=5e-3)
    assert m.overshoot_y == pytest.approx(7.0, rel=1e-2)


def test_delay_cost_monotone_on_fixture():
    # moving all gain mass to the later delay never helps
    early = l2_error(example3_loop(0.6, 0.4)[3])
    late = l2_error(example3_loop(1e-6, 1.0 - 1e-6)[3])
    assert late >= early
