"""Polynomial and rational transfer-function algebra.

Coefficients are stored in *ascending* degree order throughout the package,
``Polynomial([a0, a1, a2])`` is ``a0 + a1 z + a2 z**2``.  Descending order
only appears at the boundaries (numpy's ``roots``/``poly`` and the JSON
config format).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

NORMALIZE_RTOL = 1e-12
BOUNDARY_TOL = 1e-9


class FactorizationError(ArithmeticError):
    """Root finding did not reproduce the polynomial it was applied to."""


class Polynomial:
    """Immutable real polynomial with ascending coefficients."""

    __slots__ = ("_c",)

    def __init__(self, coeffs: Iterable[float] | float = (0.0,)):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).copy()
        if c.ndim != 1:
            raise ValueError("coefficients must be one-dimensional")
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        scale = np.max(np.abs(c))
        if scale > 0.0:
            keep = np.nonzero(np.abs(c) > NORMALIZE_RTOL * scale)[0]
            c = c[: keep[-1] + 1]
        else:
            c = np.zeros(1)
        c.setflags(write=False)
        self._c = c

    @classmethod
    def monomial(cls, k: int, coef: float = 1.0) -> Polynomial:
        c = np.zeros(k + 1)
        c[k] = coef
        return cls(c)

    @classmethod
    def from_roots(cls, roots: Sequence[complex]) -> Polynomial:
        if len(roots) == 0:
            return cls([1.0])
        desc = np.poly(np.asarray(roots))
        return cls(np.real(desc)[::-1])

    @classmethod
    def from_descending(cls, coeffs: Sequence[float]) -> Polynomial:
        return cls(np.asarray(coeffs, dtype=float)[::-1])

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        # zero polynomial reports degree 0, like a constant
        return self._c.size - 1

    @property
    def lead(self) -> float:
        return float(self._c[-1])

    def is_zero(self) -> bool:
        return self._c.size == 1 and self._c[0] == 0.0

    def descending(self) -> np.ndarray:
        return self._c[::-1].copy()

    def coef(self, k: int) -> float:
        return float(self._c[k]) if 0 <= k < self._c.size else 0.0

    def padded(self, n: int) -> np.ndarray:
        """Ascending coefficients zero-padded to length ``n``."""
        if n < self._c.size:
            raise ValueError(f"degree {self.degree} does not fit in {n} coefficients")
        out = np.zeros(n)
        out[: self._c.size] = self._c
        return out

    def roots(self) -> np.ndarray:
        return np.roots(self.descending()) if self.degree > 0 else np.zeros(0)

    def monic(self) -> Polynomial:
        if self.is_zero():
            raise ZeroDivisionError("zero polynomial has no monic form")
        return Polynomial(self._c / self.lead)

    def shift(self, k: int) -> Polynomial:
        """Multiply by ``z**k``."""
        if k < 0:
            raise ValueError("negative shift")
        return Polynomial(np.concatenate([np.zeros(k), self._c]))

    def __call__(self, z):
        return np.polyval(self._c[::-1], z)

    def __add__(self, other):
        other = _as_poly(other)
        n = max(self._c.size, other._c.size)
        return Polynomial(self.padded(n) + other.padded(n))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self._c)

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        return poly_mul(self, _as_poly(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> Polynomial:
        return Polynomial(self._c / float(scalar))

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self._c, other._c)

    def __hash__(self):
        return hash(self._c.tobytes())

    def allclose(self, other: Polynomial, rtol: float = 1e-9, atol: float = 1e-12) -> bool:
        other = _as_poly(other)
        n = max(self._c.size, other._c.size)
        return bool(np.allclose(self.padded(n), other.padded(n), rtol=rtol, atol=atol))

    def __repr__(self):
        return f"Polynomial({self._c.tolist()})"

    def __str__(self):
        terms = []
        for k in range(self._c.size - 1, -1, -1):
            a = self._c[k]
            if a == 0.0 and self._c.size > 1:
                continue
            mono = "" if k == 0 else ("z" if k == 1 else f"z^{k}")
            terms.append(f"{a:g}{'*' if mono else ''}{mono}")
        return " + ".join(terms).replace("+ -", "- ")


def _as_poly(x) -> Polynomial:
    if isinstance(x, Polynomial):
        return x
    return Polynomial([float(x)])


Z = Polynomial([0.0, 1.0])
ONE = Polynomial([1.0])


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    return Polynomial(np.convolve(a.coeffs, b.coeffs))


@dataclass(frozen=True)
class RationalTF:
    """``num/den`` in ``s`` (``sample_time is None``) or in ``z``."""

    num: Polynomial
    den: Polynomial
    sample_time: float | None = None

    def __post_init__(self):
        if self.den.is_zero():
            raise ZeroDivisionError("transfer function with zero denominator")
        if self.sample_time is not None and not self.sample_time > 0:
            raise ValueError("sample time must be positive")

    @property
    def is_discrete(self) -> bool:
        return self.sample_time is not None

    @property
    def relative_degree(self) -> int:
        return self.den.degree - self.num.degree

    def poles(self) -> np.ndarray:
        return self.den.roots()

    def __mul__(self, other: RationalTF) -> RationalTF:
        if self.sample_time != other.sample_time:
            raise ValueError("cannot multiply transfer functions with different sample times")
        return RationalTF(self.num * other.num, self.den * other.den, self.sample_time)

    def __call__(self, x):
        return self.num(x) / self.den(x)

    def dcgain(self) -> float:
        return float(np.real(self(1.0 if self.is_discrete else 0.0)))


def constant_tf(k: float, sample_time: float | None = None) -> RationalTF:
    return RationalTF(Polynomial([k]), ONE, sample_time)


def zoh_discretize(plant: RationalTF, T: float) -> RationalTF:
    """Zero-order-hold equivalent of a continuous SISO plant.

    Goes through the controllable canonical realization and the block
    matrix exponential ``expm([[A, B], [0, 0]] T)``; the discrete numerator
    is recovered with ``C adj(zI - Ad) Bd = det(zI - Ad + Bd C) - det(zI - Ad)``.
    """
    if plant.is_discrete:
        raise ValueError("plant is already discrete")
    if not T > 0:
        raise ValueError("sampling time must be positive")
    num, den = plant.num, plant.den
    if den.lead == 0.0:
        raise ValueError("degenerate denominator")
    if num.degree > den.degree:
        raise ValueError("plant must be proper")
    n = den.degree
    num = num / den.lead
    den = den.monic()
    if n == 0:
        return RationalTF(Polynomial([num.coef(0)]), ONE, T)

    feedthrough = num.coef(n)
    strict = num - den * feedthrough
    a = den.coeffs[:n]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -a
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = strict.padded(n).reshape(1, n)

    block = np.zeros((n + 1, n + 1))
    block[:n, :n] = A * T
    block[:n, n:] = B * T
    phi = expm(block)
    Ad, Bd = phi[:n, :n], phi[:n, n:]

    char = np.real(np.poly(Ad))
    closed = np.real(np.poly(Ad - Bd @ C))
    num_d = Polynomial((closed - char)[::-1]) + Polynomial(char[::-1]) * feedthrough
    return RationalTF(num_d, Polynomial(char[::-1]), T)


@dataclass(frozen=True)
class StableUnstableSplit:
    """``P(z) = numerator / (stable_part * unstable_part_den)``, both parts monic."""

    numerator: Polynomial
    stable_part: Polynomial
    unstable_part_den: Polynomial
    sample_time: float | None = None

    @property
    def r(self) -> int:
        return self.unstable_part_den.degree

    @property
    def n(self) -> int:
        return self.stable_part.degree + self.unstable_part_den.degree

    @property
    def denominator(self) -> Polynomial:
        return self.stable_part * self.unstable_part_den

    def tf(self) -> RationalTF:
        return RationalTF(self.numerator, self.denominator, self.sample_time)


def split_stable(P: RationalTF, boundary_tol: float = BOUNDARY_TOL) -> StableUnstableSplit:
    """Factor the plant denominator into stable and not-stable monic parts.

    Roots with modulus ``>= 1 - boundary_tol`` go to the unstable side, so
    marginal poles are never cancelled by the controller.
    """
    if not P.is_discrete:
        raise ValueError("split_stable expects a discrete plant")
    den = P.den
    lead = den.lead
    roots = den.roots()
    stable = roots[np.abs(roots) < 1.0 - boundary_tol]
    unstable = roots[np.abs(roots) >= 1.0 - boundary_tol]
    M = Polynomial.from_roots(stable)
    Dp = Polynomial.from_roots(unstable)
    rebuilt = (M * Dp) * lead
    scale = np.max(np.abs(den.coeffs))
    n = max(rebuilt.coeffs.size, den.coeffs.size)
    residual = np.max(np.abs(rebuilt.padded(n) - den.padded(n))) / scale
    if residual > 1e-9:
        raise FactorizationError(f"root finder residual {residual:.3e} exceeds 1e-9")
    return StableUnstableSplit(P.num / lead, M, Dp, P.sample_time)
