"""Pair scalings ``(a1, a2)`` encoding ``eps**a1 * (log log 1/eps)**a2``.

Both components are half-integers, stored as integer numerators over a fixed
denominator of 2 so that ordering and arithmetic are exact. The infinite
scaling :data:`INF` is strictly larger than every finite scaling.

The order is dominance as ``eps -> 0+``: ``a`` precedes ``b`` when ``a1 < b1``,
or when ``a1 == b1`` and ``a2 >= b2`` (a larger log power is a larger quantity,
hence a *smaller* scaling).
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

__all__ = [
    "Order",
    "Scaling",
    "INF",
    "ZERO",
    "compare",
    "add",
    "scalar_mul",
    "eval_epsilon",
    "smin",
    "check_epsilon",
]


class Order(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def _half_numerator(value) -> int:
    """Return ``2*value`` as an int, refusing anything that is not a half-integer."""
    frac = Fraction(value)
    doubled = 2 * frac
    if doubled.denominator != 1:
        raise ValueError(f"{value!r} is not a multiple of 1/2")
    return int(doubled)


@functools.total_ordering
@dataclass(frozen=True)
class Scaling:
    """Element of the extended scaling set.

    ``num1`` and ``num2`` are the numerators of ``a1`` and ``a2`` over 2.
    ``infinite=True`` marks the infinite scaling; its numerators are always 0.
    """

    num1: int = 0
    num2: int = 0
    infinite: bool = False

    def __post_init__(self):
        if not isinstance(self.num1, int) or not isinstance(self.num2, int):
            raise TypeError("scaling numerators must be int")
        if self.infinite and (self.num1 or self.num2):
            raise ValueError("the infinite scaling carries no numerators")

    @classmethod
    def of(cls, a1, a2=0) -> "Scaling":
        """Build a finite scaling from values such as ``Fraction(3, 2)``, ``1``, ``"1/2"``."""
        return cls(_half_numerator(a1), _half_numerator(a2))

    @property
    def first(self) -> Fraction:
        if self.infinite:
            raise ValueError("infinite scaling has no components")
        return Fraction(self.num1, 2)

    @property
    def second(self) -> Fraction:
        if self.infinite:
            raise ValueError("infinite scaling has no components")
        return Fraction(self.num2, 2)

    @property
    def proj1(self):
        """First component, or ``math.inf`` for the infinite scaling."""
        return math.inf if self.infinite else self.first

    @property
    def is_power(self) -> bool:
        """True for finite scalings without a log component."""
        return not self.infinite and self.num2 == 0

    def _key(self):
        if self.infinite:
            return (1, 0, 0)
        return (0, self.num1, -self.num2)

    def __lt__(self, other):
        if not isinstance(other, Scaling):
            return NotImplemented
        return self._key() < other._key()

    def __add__(self, other):
        if not isinstance(other, Scaling):
            return NotImplemented
        return add(self, other)

    def __sub__(self, other):
        if not isinstance(other, Scaling):
            return NotImplemented
        if self.infinite or other.infinite:
            raise ValueError("difference with the infinite scaling is undefined")
        return Scaling(self.num1 - other.num1, self.num2 - other.num2)

    def __rmul__(self, ell):
        if not isinstance(ell, int):
            return NotImplemented
        return scalar_mul(ell, self)

    def __str__(self):
        if self.infinite:
            return "inf"
        return f"({_fmt(self.first)}, {_fmt(self.second)})"

    def __repr__(self):
        return "INF" if self.infinite else f"Scaling.of({str(self.first)!r}, {str(self.second)!r})"

    def to_json(self) -> dict:
        if self.infinite:
            return {"inf": True}
        return {"num1": self.num1, "num2": self.num2}

    @classmethod
    def from_json(cls, obj) -> "Scaling":
        if obj.get("inf"):
            return INF
        return cls(int(obj["num1"]), int(obj["num2"]))


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


INF = Scaling(infinite=True)
ZERO = Scaling(0, 0)


def compare(a: Scaling, b: Scaling) -> Order:
    """Three-way comparison under the dominance order (two infinities are equal)."""
    ka, kb = a._key(), b._key()
    if ka < kb:
        return Order.LESS
    if ka > kb:
        return Order.GREATER
    return Order.EQUAL


def add(a: Scaling, b: Scaling) -> Scaling:
    if a.infinite or b.infinite:
        return INF
    return Scaling(a.num1 + b.num1, a.num2 + b.num2)


def scalar_mul(ell: int, a: Scaling) -> Scaling:
    """``ell * a`` for a nonnegative integer ``ell``; ``0 * a`` is ``(0, 0)`` even for ``INF``."""
    if ell < 0:
        raise ValueError("scalar must be nonnegative")
    if ell == 0:
        return ZERO
    if a.infinite:
        return INF
    return Scaling(ell * a.num1, ell * a.num2)


def smin(values: Iterable[Scaling]) -> Scaling:
    """Minimum under the dominance order; the empty minimum is ``INF``."""
    return min(values, key=Scaling._key, default=INF)


E_INV = math.exp(-1.0)


def check_epsilon(eps: float) -> float:
    eps = float(eps)
    if not (0.0 < eps < E_INV):
        raise ValueError(f"eps must lie in (0, 1/e), got {eps!r}")
    return eps


def eval_epsilon(a: Scaling, eps: float) -> float:
    """Evaluate ``eps**a1 * (log log 1/eps)**a2``.

    Parameters
    ----------
    a : Scaling
        Finite scaling; ``a2`` may be negative (remainder exponents).
    eps : float
        Must lie in ``(0, 1/e)`` so that ``log log 1/eps > 0``.

    Returns
    -------
    float
        A strictly positive number.
    """
    eps = check_epsilon(eps)
    if a.infinite:
        raise ValueError("cannot evaluate the infinite scaling")
    loglog = math.log(math.log(1.0 / eps))
    return eps ** (a.num1 / 2) * loglog ** (a.num2 / 2)
