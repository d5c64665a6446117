"""Convex quadratic programming by a primal active-set method.

Solves ``min 0.5 x'Hx + g'x + const`` subject to ``A_eq x = b_eq`` and
``A_in x <= b_in`` for symmetric positive semidefinite ``H``.  A starting
point comes from two small linear programs: an elastic one whose optimum is
zero iff the constraints are consistent (its duals are the infeasibility
certificate), then one that pushes the start away from the inequality
boundaries to limit degeneracy.  Zero-curvature directions are followed
until a constraint blocks them; if none does, the problem is unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

PSD_TOL = 1e-10


class QPError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadraticProgram:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    const: float = 0.0

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError("Hessian must be square")
        H = 0.5 * (H + H.T)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).reshape(n))
        for A, b in (("A_eq", "b_eq"), ("A_in", "b_in")):
            M = getattr(self, A)
            M = np.zeros((0, n)) if M is None else np.atleast_2d(np.asarray(M, dtype=float)).reshape(-1, n)
            v = getattr(self, b)
            v = np.zeros(0) if v is None else np.asarray(v, dtype=float).reshape(-1)
            if M.shape[0] != v.size:
                raise ValueError(f"{A} and {b} sizes differ")
            object.__setattr__(self, A, M)
            object.__setattr__(self, b, v)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x + self.const)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.H).min()) if self.n else 0.0

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        scale = max(1.0, float(np.abs(self.H).max(initial=0.0)))
        return self.min_eigenvalue() >= -tol * scale


@dataclass
class QPResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    value: float = float("nan")
    iterations: int = 0
    kkt_residual: float = float("nan")
    active: tuple[int, ...] = ()
    lam_eq: np.ndarray | None = None
    lam_in: np.ndarray | None = None
    certificate: dict = field(default_factory=dict)
    direction: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _null_space(A: np.ndarray, n: int, rtol: float = 1e-12) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > rtol * max(1.0, s[0]))) if s.size else 0
    return vt[rank:].T


def _rank(A: np.ndarray, rtol: float = 1e-10) -> int:
    if A.shape[0] == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rtol * max(1.0, s[0])))


def _phase_one(qp: QuadraticProgram, tol: float):
    """Elastic feasibility LP, then a max-slack LP for a well-centred start."""
    n, me, mi = qp.n, qp.A_eq.shape[0], qp.A_in.shape[0]
    scale = max(1.0, np.abs(qp.b_eq).max(initial=0.0), np.abs(qp.b_in).max(initial=0.0))
    # variables: x (free), t_in >= 0, t_plus >= 0, t_minus >= 0
    nv = n + mi + 2 * me
    c = np.concatenate([np.zeros(n), np.ones(mi + 2 * me)])
    A_ub = np.hstack([qp.A_in, -np.eye(mi), np.zeros((mi, 2 * me))]) if mi else None
    A_eq = np.hstack([qp.A_eq, np.zeros((me, mi)), -np.eye(me), np.eye(me)]) if me else None
    bounds = [(None, None)] * n + [(0, None)] * (mi + 2 * me)
    res = linprog(c, A_ub=A_ub, b_ub=qp.b_in if mi else None, A_eq=A_eq, b_eq=qp.b_eq if me else None,
                  bounds=bounds, method="highs")
    if res.status == 3:
        raise QPError("phase-one LP unexpectedly unbounded")
    if res.status != 0:
        raise QPError(f"phase-one LP failed: {res.message}")
    if res.fun > tol * scale:
        y_in = -np.asarray(res.ineqlin.marginals) if mi else np.zeros(0)
        y_eq = -np.asarray(res.eqlin.marginals) if me else np.zeros(0)
        # y_in >= 0, y_in'A_in + y_eq'A_eq = 0 and y_in'b_in + y_eq'b_eq < 0
        gap = float(y_in @ qp.b_in + y_eq @ qp.b_eq)
        stat = np.abs(y_in @ qp.A_in + y_eq @ qp.A_eq).max(initial=0.0) if n else 0.0
        cert = {"violation": float(res.fun), "y_in": y_in, "y_eq": y_eq, "farkas_value": gap,
                "farkas_stationarity": float(stat), "verified": bool(gap < 0 and stat <= 1e-7 * max(1.0, abs(gap)))}
        return None, cert
    x = res.x[:n]
    if mi:
        # push away from the boundaries: max tau, A_in x + tau*|a_i| <= b_in, tau <= 1
        norms = np.linalg.norm(qp.A_in, axis=1)
        c2 = np.concatenate([np.zeros(n), [-1.0]])
        A2 = np.hstack([qp.A_in, norms[:, None]])
        Ae2 = np.hstack([qp.A_eq, np.zeros((me, 1))]) if me else None
        r2 = linprog(c2, A_ub=A2, b_ub=qp.b_in, A_eq=Ae2, b_eq=qp.b_eq if me else None,
                     bounds=[(None, None)] * n + [(0, 1.0)], method="highs")
        if r2.status == 0 and r2.x[-1] > 0:
            x = r2.x[:n]
    return x, {}


def solve_qp(qp: QuadraticProgram, tol: float = 1e-10, max_iter: int | None = None) -> QPResult:
    """Solve a convex QP; see module docstring for the method."""
    if not qp.is_psd():
        raise QPError(f"Hessian not positive semidefinite (min eigenvalue {qp.min_eigenvalue():.3e})")
    n, me, mi = qp.n, qp.A_eq.shape[0], qp.A_in.shape[0]
    x, cert = _phase_one(qp, 1e-9)
    if x is None:
        return QPResult("infeasible", certificate=cert)
    H, g = qp.H, qp.g
    A_in, b_in = qp.A_in, qp.b_in
    hscale = max(1.0, np.abs(H).max(initial=0.0))
    row_norm = np.linalg.norm(A_in, axis=1) if mi else np.zeros(0)
    bscale = max(1.0, np.abs(b_in).max(initial=0.0), np.abs(qp.b_eq).max(initial=0.0))
    feas_tol = 1e-9 * bscale

    # initial working set: equalities plus independent active inequalities
    work: list[int] = []
    base = qp.A_eq.copy()
    rank = _rank(base)
    for i in range(mi):
        if b_in[i] - A_in[i] @ x <= feas_tol * max(1.0, row_norm[i]):
            trial = np.vstack([base, A_in[i]])
            r = _rank(trial)
            if r > rank:
                base, rank, work = trial, r, work + [i]

    max_iter = max_iter or 50 * (n + mi + me) + 100
    degenerate = 0
    it = 0
    for it in range(1, max_iter + 1):
        A_w = np.vstack([qp.A_eq, A_in[work]]) if work else qp.A_eq
        grad = H @ x + g
        Z = _null_space(A_w, n)
        p = np.zeros(n)
        unbounded_dir = False
        if Z.shape[1]:
            Hr = Z.T @ H @ Z
            gr = Z.T @ grad
            w, V = np.linalg.eigh(Hr)
            pos = w > PSD_TOL * hscale
            coef = V.T @ gr
            flat = ~pos
            gscale = max(1.0, np.abs(grad).max())
            if np.any(flat) and np.abs(coef[flat]).max() > 1e-11 * gscale:
                # descent along a direction of zero curvature
                p = -Z @ (V[:, flat] @ coef[flat])
                unbounded_dir = True
            else:
                p = -Z @ (V[:, pos] @ (coef[pos] / w[pos]))
        xscale = max(1.0, np.abs(x).max())
        if not unbounded_dir and np.abs(p).max() <= 1e-12 * xscale:
            lam = np.linalg.lstsq(A_w.T, -grad, rcond=None)[0] if A_w.shape[0] else np.zeros(0)
            lam_in = lam[me:]
            neg = [k for k, v in enumerate(lam_in) if v < -1e-10 * max(1.0, np.abs(grad).max(), np.abs(lam).max(initial=0.0))]
            if not neg:
                return _finish(qp, x, work, lam[:me], lam_in, it)
            if degenerate > 2:
                k = min(neg, key=lambda k: work[k])  # smallest index once steps stall
            else:
                k = min(neg, key=lambda k: (lam_in[k], work[k]))
            work.pop(k)
            continue
        # ratio test
        step = np.inf if unbounded_dir else 1.0
        block = None
        for i in range(mi):
            if i in work:
                continue
            ap = A_in[i] @ p
            if ap > 1e-14 * row_norm[i] * np.abs(p).max():
                t = max(0.0, (b_in[i] - A_in[i] @ x) / ap)
                if t < step or (t == step and block is not None and i < block):
                    step, block = t, i
        if not np.isfinite(step):
            return QPResult("unbounded", x=x, iterations=it, direction=p / np.linalg.norm(p))
        degenerate = degenerate + 1 if step == 0.0 else 0
        x = x + step * p
        if block is not None:
            work.append(block)
    raise QPError(f"active-set iteration limit {max_iter} reached")


def _finish(qp: QuadraticProgram, x, work, lam_eq, lam_w, it) -> QPResult:
    mi = qp.A_in.shape[0]
    lam_in = np.zeros(mi)
    for k, i in enumerate(work):
        lam_in[i] = max(lam_w[k], 0.0)
    return QPResult("optimal", x=x, value=qp.objective(x), iterations=it,
                    kkt_residual=kkt_residual(qp, x, lam_eq, lam_in), active=tuple(sorted(work)),
                    lam_eq=np.asarray(lam_eq), lam_in=lam_in)


def kkt_residual(qp: QuadraticProgram, x, lam_eq, lam_in) -> float:
    """Largest violation among stationarity, feasibility and complementarity (scaled)."""
    grad = qp.H @ x + qp.g
    stat = grad + qp.A_eq.T @ lam_eq + qp.A_in.T @ lam_in
    scale = max(1.0, np.abs(grad).max(initial=0.0))
    parts = [np.abs(stat).max(initial=0.0) / scale]
    bscale = max(1.0, np.abs(qp.b_eq).max(initial=0.0), np.abs(qp.b_in).max(initial=0.0))
    if qp.A_eq.shape[0]:
        parts.append(np.abs(qp.A_eq @ x - qp.b_eq).max() / bscale)
    if qp.A_in.shape[0]:
        slack = qp.b_in - qp.A_in @ x
        parts.append(max(0.0, -slack.min()) / bscale)
        parts.append(max(0.0, -lam_in.min()))
        parts.append(np.abs(lam_in * slack).max() / (scale * bscale))
    return float(max(parts))


def solve_kkt_equality(qp: QuadraticProgram) -> np.ndarray:
    """Direct solve of the KKT system when only equality constraints are present."""
    if qp.A_in.shape[0]:
        raise ValueError("inequalities present")
    n, me = qp.n, qp.A_eq.shape[0]
    K = np.block([[qp.H, qp.A_eq.T], [qp.A_eq, np.zeros((me, me))]])
    rhs = np.concatenate([-qp.g, qp.b_eq])
    return np.linalg.lstsq(K, rhs, rcond=None)[0][:n]
