"""Deadbeat controller structure, closed-loop assembly and step metrics.

The controller is ``C(z) = M(z) z^ddr z^ddo N_C'(z) / ((z - 1) core(z))``
where ``M`` cancels the stable plant poles and the two ``z`` powers cancel
the network poles at the origin.  Deadbeat tracking means the closed-loop
characteristic polynomial is ``z^(m + r + 1)``.

Reported L2 norms include ``reference_lead`` samples of full error before
the loop's first sample (default 1).  This is the accounting under which
the reference figures for the unstable first-order example come out; ``reference_lead=0`` gives the
bare sum over ``k >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .poly import ONE, Polynomial, RationalTF, StableUnstableSplit, Z

DEADBEAT_TOL = 1e-9


class StructureError(ValueError):
    """Degrees of controller, plant and networks do not fit together."""


class DeadbeatInfeasible(ArithmeticError):
    """No controller of the requested degree places all poles at the origin."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class NotConverged(ArithmeticError):
    pass


def core_degree(s: int, deg_M: int, ddr: int, ddo: int) -> int:
    """Denominator-core degree ``m`` from ``m + 1 = s + deg M + ddr + ddo``."""
    m = s + deg_M + ddr + ddo - 1
    if m < 0:
        raise StructureError("degree balance gives a negative core degree")
    return m


@dataclass(frozen=True)
class ControllerStructure:
    M: Polynomial
    ddr: int
    ddo: int
    s: int
    c: tuple[float, ...]  # c_{m-1}, ..., c_0
    d: tuple[float, ...]  # d_s, ..., d_0

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        if len(self.d) != self.s + 1:
            raise StructureError(f"expected {self.s + 1} numerator coefficients, got {len(self.d)}")
        if self.m + 1 != self.s + self.M.degree + self.ddr + self.ddo:
            raise StructureError(
                f"degree balance violated: m + 1 = {self.m + 1} but s + deg M + ddr + ddo = "
                f"{self.s + self.M.degree + self.ddr + self.ddo}"
            )

    @property
    def m(self) -> int:
        return len(self.c)

    @property
    def core(self) -> Polynomial:
        return Polynomial(list(self.c[::-1]) + [1.0])

    @property
    def den_prime(self) -> Polynomial:
        return (Z - 1.0) * self.core

    @property
    def num_prime(self) -> Polynomial:
        return Polynomial(self.d[::-1])

    def tf(self, sample_time: float | None = None) -> RationalTF:
        num = self.M * Polynomial.monomial(self.ddr + self.ddo) * self.num_prime
        return RationalTF(num, self.den_prime, sample_time)


def network_parts(G: RationalTF | None) -> tuple[Polynomial, int]:
    """``(N_G, max_delay)`` for ``G = N_G / z^max_delay``; ``None`` means no network."""
    if G is None:
        return ONE, 0
    den = G.den
    k = den.degree
    if np.any(den.coeffs[:k] != 0.0):
        raise StructureError("network transfer function must have a pure z^k denominator")
    return G.num / den.lead, k


@dataclass(frozen=True)
class ClosedLoop:
    y_tf: RationalTF
    u_tf: RationalTF
    char: Polynomial
    l: int
    nu: int
    q: np.ndarray  # ascending coefficients of N_C' N_GR N_P
    qu: np.ndarray  # ascending coefficients of N_C' N_GR D_P

    def is_deadbeat(self, tol: float = DEADBEAT_TOL) -> bool:
        c = self.char.coeffs
        return bool(c[-1] != 0.0 and np.all(np.abs(c[:-1]) <= tol * abs(c[-1])))


def closed_loop(
    ctrl: ControllerStructure,
    plant: StableUnstableSplit,
    G_R: RationalTF,
    G_O: RationalTF | None = None,
) -> ClosedLoop:
    N_R, ddr = network_parts(G_R)
    N_O, ddo = network_parts(G_O)
    if (ctrl.ddr, ctrl.ddo) != (ddr, ddo):
        raise StructureError(f"controller built for delays ({ctrl.ddr}, {ctrl.ddo}), networks have ({ddr}, {ddo})")
    if ctrl.M.degree != plant.stable_part.degree or not ctrl.M.allclose(plant.stable_part):
        raise StructureError("controller M(z) does not match the plant's stable part")
    fwd = ctrl.num_prime * N_R
    char = ctrl.den_prime * plant.unstable_part_den + fwd * plant.numerator * N_O
    shift = Polynomial.monomial(ddo)
    y_num = shift * fwd * plant.numerator
    u_num = shift * fwd * plant.denominator
    l = ctrl.m + plant.r + 1 - ddo
    min_delay = ddr - N_R.degree
    nu = min_delay + plant.n - plant.numerator.degree
    q = (fwd * plant.numerator).coeffs.copy()
    qu = (fwd * plant.denominator).coeffs.copy()
    return ClosedLoop(RationalTF(y_num, char), RationalTF(u_num, char), char, l, nu, q, qu)


def deadbeat_constraint(
    ctrl: ControllerStructure,
    plant: StableUnstableSplit,
    G_R: RationalTF,
    G_O: RationalTF | None = None,
) -> Polynomial:
    """``D_C' D_P' + N_C' N_GR N_P N_GO - z^(m + r + 1)``; zero iff deadbeat."""
    cl = closed_loop(ctrl, plant, G_R, G_O)
    top = ctrl.m + plant.r + 1
    if cl.char.degree != top:
        raise StructureError(f"characteristic polynomial has degree {cl.char.degree}, expected {top}")
    return cl.char - Polynomial.monomial(top)


def solve_deadbeat(
    plant: StableUnstableSplit,
    G_R: RationalTF,
    G_O: RationalTF | None = None,
    s: int | None = None,
    tol: float = 1e-8,
) -> ControllerStructure:
    """Controller coefficients ``(c, d)`` for fixed networks.

    The deadbeat identity is linear in ``(c, d)``; ``s`` defaults to ``r``,
    which makes the system square.
    """
    N_R, ddr = network_parts(G_R)
    N_O, ddo = network_parts(G_O)
    s = plant.r if s is None else s
    m = core_degree(s, plant.stable_part.degree, ddr, ddo)
    top = m + plant.r + 1
    Dp = plant.unstable_part_den
    K = N_R * plant.numerator * N_O
    cols = [((Z - 1.0) * Dp).shift(j) for j in range(m - 1, -1, -1)]
    cols += [K.shift(j) for j in range(s, -1, -1)]
    rhs = Polynomial.monomial(top) - ((Z - 1.0) * Dp).shift(m)
    x, resid = solve_columns(cols, rhs, top)
    if resid > tol * max(1.0, float(np.max(np.abs(rhs.coeffs)))):
        raise DeadbeatInfeasible(f"deadbeat identity residual {resid:.3e}", resid)
    return ControllerStructure(plant.stable_part, ddr, ddo, s, tuple(x[:m]), tuple(x[m:]))


def solve_columns(cols: Sequence[Polynomial], rhs: Polynomial, n: int, rcond: float = 1e-10):
    """Least squares for ``sum x_k cols[k] = rhs`` on coefficients ``0..n-1``."""
    if rhs.degree >= n or any(c.degree >= n for c in cols):
        raise StructureError("deadbeat identity has terms above the leading power")
    A = np.column_stack([c.padded(n) for c in cols]) if cols else np.zeros((n, 0))
    b = rhs.padded(n)
    if A.shape[1] == 0:
        return np.zeros(0), float(np.max(np.abs(b)))
    x, *_ = np.linalg.lstsq(A, b, rcond=rcond)
    return x, float(np.max(np.abs(A @ x - b)))


def q_coefficients(d: Sequence[float], gamma_R: Mapping[int, float], N_P: Polynomial) -> np.ndarray:
    """Ascending ``q_h = sum_{i + j + (ddr - k) = h} b_i d_j gamma_R(k)``.

    ``d`` is given highest power first (``d_s, ..., d_0``).
    """
    ddr = max(gamma_R)
    d_asc = list(d)[::-1]
    b = N_P.coeffs
    size = len(b) + len(d_asc) + ddr
    q = np.zeros(size)
    for i, bi in enumerate(b):
        for j, dj in enumerate(d_asc):
            for k, g in gamma_R.items():
                q[i + j + ddr - k] += bi * dj * g
    return Polynomial(q).coeffs.copy()


# ---------------------------------------------------------------------------
# time response


def simulate(tf: RationalTF, x: np.ndarray) -> np.ndarray:
    n = tf.den.degree
    if tf.num.degree > n:
        raise StructureError("improper transfer function")
    a = tf.den.descending()
    b = np.concatenate([np.zeros(n - tf.num.degree), tf.num.descending()])
    return lfilter(b, a, x)


@dataclass(frozen=True)
class StepTrace:
    k: np.ndarray
    r: np.ndarray
    u: np.ndarray
    y: np.ndarray

    @property
    def e(self) -> np.ndarray:
        return self.y - self.r


def step_response(cl: ClosedLoop, A: float, horizon: int, reference_lead: int = 0) -> StepTrace:
    """Simulated step response for ``k = -reference_lead .. horizon - 1``."""
    if horizon < cl.l:
        raise ValueError(f"horizon {horizon} shorter than the response time {cl.l}")
    step = np.full(horizon, float(A))
    y = simulate(cl.y_tf, step)
    u = simulate(cl.u_tf, step)
    pad = np.zeros(reference_lead)
    k = np.arange(-reference_lead, horizon)
    r = np.full(k.size, float(A))
    return StepTrace(k, r, np.concatenate([pad, u]), np.concatenate([pad, y]))


def error_closed_form(q: np.ndarray, l: int, A: float) -> np.ndarray:
    """``e(k)`` for ``k = 0..l-1`` from the cumulative output coefficients."""
    q = np.asarray(q, dtype=float)
    e = np.empty(l)
    for k in range(l):
        e[k] = A * q[max(l - k, 0):].sum() - A
    return e


def l2_closed_form(cl: ClosedLoop, A: float, reference_lead: int = 1) -> float:
    if not cl.is_deadbeat():
        raise DeadbeatInfeasible("closed form needs a deadbeat loop")
    if abs(cl.q.sum() - 1.0) > 1e-9:
        raise DeadbeatInfeasible(f"loop has steady-state error (DC gain {cl.q.sum():.12g})")
    e = error_closed_form(cl.q, cl.l, A)
    return float(reference_lead * A * A + np.dot(e, e))


def l2_simulated(cl: ClosedLoop, A: float, reference_lead: int = 1, horizon: int | None = None,
                 tol: float = DEADBEAT_TOL, max_horizon: int = 1 << 16) -> float:
    """Quadratic error norm by simulation, doubling the horizon until the tail vanishes.

    The tail only has to fall below ``tol * A``: a loop that is deadbeat up to
    rounding keeps a constant error of that order forever.
    """
    h = horizon or max(4 * cl.l + 8, 64)
    while True:
        tr = step_response(cl, A, h)
        e = tr.e
        tail = np.abs(e[-max(8, h // 8):]).max()
        if tail <= tol * max(1.0, abs(A)):
            return float(reference_lead * A * A + np.dot(e, e))
        if h >= max_horizon:
            raise NotConverged(f"error still {tail:.3e} after {h} samples")
        h *= 2


def l2_error(cl: ClosedLoop, A: float = 1.0, reference_lead: int = 1) -> float:
    """L2 norm of the step-tracking error (closed form when deadbeat)."""
    if cl.is_deadbeat():
        return math.sqrt(l2_closed_form(cl, A, reference_lead))
    return math.sqrt(l2_simulated(cl, A, reference_lead))


def overshoot(cl: ClosedLoop, A: float = 1.0) -> tuple[float, float]:
    """Peak ``|y(k)|`` and ``|u(k)|`` of the step response."""
    if cl.is_deadbeat():
        tr = step_response(cl, A, cl.l + 2)
    else:
        h = 256
        while True:
            tr = step_response(cl, A, h)
            if np.abs(np.diff(tr.y[-h // 4:])).max() <= 1e-12 * max(1.0, abs(A)):
                break
            if h >= 1 << 16:
                raise NotConverged("step response does not settle")
            h *= 2
    return float(np.abs(tr.y).max()), float(np.abs(tr.u).max())


@dataclass(frozen=True)
class StepMetrics:
    amplitude: float
    l2_sq: float
    overshoot_y: float
    overshoot_u: float
    settled_at: int
    response_time: int
    nu: int
    reference_lead: int

    @property
    def l2(self) -> float:
        return math.sqrt(self.l2_sq)


def step_metrics(cl: ClosedLoop, A: float = 1.0, reference_lead: int = 1) -> StepMetrics:
    if cl.is_deadbeat():
        l2_sq = l2_closed_form(cl, A, reference_lead)
    else:
        l2_sq = l2_simulated(cl, A, reference_lead)
    oy, ou = overshoot(cl, A)
    tr = step_response(cl, A, max(cl.l + 2, 64))
    bad = np.nonzero(np.abs(tr.e) > 1e-9 * max(1.0, abs(A)))[0]
    settled = int(tr.k[bad[-1]] + 1) if bad.size else 0
    return StepMetrics(float(A), l2_sq, oy, ou, settled, cl.l, cl.nu, reference_lead)
