"""Builders for the model systems used throughout the package and its tests."""

from __future__ import annotations

import math
from fractions import Fraction

from .polyvec import Polynomial, PolyVectorField, as_fraction
from .propagation import SdeSystem

__all__ = [
    "brownian",
    "kolmogorov",
    "iterated_kolmogorov",
    "langevin",
    "shifted_langevin",
    "lorenz96",
    "rdr",
    "npnh",
    "sabra",
    "quadratic_example",
]


def _var(n, i, k=1):
    return Polynomial.variable(n, i, k)


def brownian(n: int) -> SdeSystem:
    return SdeSystem(PolyVectorField.zero(n), (1.0,) * n, f"brownian_n{n}")


def kolmogorov(damping=0) -> SdeSystem:
    """``dx1 = -damping*x1 dt + dB``, ``dx2 = x1 dt``."""
    x1 = _var(2, 0)
    return SdeSystem(PolyVectorField([x1 * (-as_fraction(damping)), x1]), (1.0, 0.0),
                     "kolmogorov2" if not damping else "kolmogorov2_damped")


def iterated_kolmogorov(n: int) -> SdeSystem:
    """Chain ``dx1 = dB``, ``dx_j = x_{j-1} dt``."""
    comps = [Polynomial.zero(n)] + [_var(n, j - 1) for j in range(1, n)]
    return SdeSystem(PolyVectorField(comps), (1.0,) + (0.0,) * (n - 1), f"ik_n{n}")


def langevin(k: int, potential: Polynomial, gamma=1, name: str = "") -> SdeSystem:
    """Second-order Langevin dynamics on ``(q, p)`` with ``q, p`` in ``R^k``.

    ``dq = p dt``, ``dp = (-gamma p - grad U(q)) dt + sqrt(2) dB``; ``potential``
    is a polynomial in ``k`` variables.
    """
    if potential.nvars != k:
        raise ValueError("potential must be a polynomial in k variables")
    n = 2 * k
    embed = [_var(n, i) for i in range(k)]
    comps = [_var(n, k + i) for i in range(k)]
    for i in range(k):
        grad = potential.diff(i).compose(embed)
        comps.append(_var(n, k + i) * (-as_fraction(gamma)) - grad)
    sigma = (0.0,) * k + (math.sqrt(2.0),) * k
    return SdeSystem(PolyVectorField(comps), sigma, name or f"langevin_k{k}")


def shifted_langevin(k: int, potential: Polynomial, q0, p0) -> SdeSystem:
    """Langevin dynamics written for the displacement from ``(q0, p0)``."""
    from .regular import shift_system

    base = langevin(k, potential)
    return shift_system(base, list(q0) + list(p0))


def lorenz96(n: int, noisy=(0, 1), forcing=0, sigma: float = 1.0) -> SdeSystem:
    """``dx_i = ((x_{i+1} - x_{i-2}) x_{i-1} - x_i + F) dt`` with periodic indices.

    Noise of size ``sigma`` acts on the coordinates listed in ``noisy``
    (0-based).
    """
    if n < 4:
        raise ValueError("Lorenz '96 needs n >= 4")
    comps = []
    for i in range(n):
        xp1, xm1, xm2 = _var(n, (i + 1) % n), _var(n, (i - 1) % n), _var(n, (i - 2) % n)
        comps.append((xp1 - xm2) * xm1 - _var(n, i) + as_fraction(forcing))
    sig = tuple(float(sigma) if i in noisy else 0.0 for i in range(n))
    tag = "" if tuple(noisy) == (0, 1) else "_noise" + "".join(str(i + 1) for i in noisy)
    return SdeSystem(PolyVectorField(comps), sig, f"lorenz96_n{n}{tag}")


def rdr() -> SdeSystem:
    """Four-dimensional system whose two limiting drifts differ in the last component."""
    n = 4
    x1, x2, x3 = _var(n, 0), _var(n, 1), _var(n, 2)
    comps = [Polynomial.zero(n), Polynomial.zero(n), x1 * x2, x1 * x3**2 + x3 * x1**5]
    return SdeSystem(PolyVectorField(comps), (1.0, 1.0, 0.0, 0.0), "rdr")


def npnh() -> SdeSystem:
    """Noise reaches every coordinate but the process lives on ``{x2 = x3}``."""
    n = 3
    x1 = _var(n, 0)
    return SdeSystem(PolyVectorField([Polynomial.zero(n), x1, x1]), (1.0, 0.0, 0.0), "npnh")


def quadratic_example(a, b) -> SdeSystem:
    """Planar drift ``(x^2 - a y^2 + b y, 2x)`` with noise on ``y`` only."""
    n = 2
    x, y = _var(n, 0), _var(n, 1)
    comps = [x**2 - y**2 * as_fraction(a) + y * as_fraction(b), x * 2]
    return SdeSystem(PolyVectorField(comps), (0.0, 1.0), f"quadratic_a{a}_b{b}")


class _C:
    """Complex polynomial as a pair of real polynomials."""

    def __init__(self, re, im):
        self.re, self.im = re, im

    def __add__(self, o):
        return _C(self.re + o.re, self.im + o.im)

    def __sub__(self, o):
        return _C(self.re - o.re, self.im - o.im)

    def __mul__(self, o):
        if isinstance(o, _C):
            return _C(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
        return _C(self.re * o, self.im * o)

    def conj(self):
        return _C(self.re, -self.im)

    def times_i(self):
        return _C(-self.im, self.re)


def sabra(J: int, delta=Fraction(1, 2), noisy_shells: int = 2) -> SdeSystem:
    """Realified Sabra shell model; shell ``m`` occupies coordinates ``2m, 2m+1`` (re, im).

    ``du_m = i 2^m (conj(u_{m+1}) u_{m+2} - delta conj(u_{m-1}) u_{m+1}
    - (delta-1)/4 u_{m-2} u_{m-1}) dt - delta 4^m u_m dt`` plus noise on the
    real and imaginary parts of the first ``noisy_shells`` shells.
    """
    delta = as_fraction(delta)
    n = 2 * J
    zero = Polynomial.zero(n)

    def u(m):  # 1-based shell index, zero outside 1..J
        if 1 <= m <= J:
            return _C(_var(n, 2 * (m - 1)), _var(n, 2 * (m - 1) + 1))
        return _C(zero, zero)

    comps = []
    for m in range(1, J + 1):
        inner = (u(m + 1).conj() * u(m + 2)) - (u(m - 1).conj() * u(m + 1)) * delta - (u(m - 2) * u(m - 1)) * ((delta - 1) / 4)
        du = inner.times_i() * (2**m) - u(m) * (delta * 4**m)
        comps += [du.re, du.im]
    sigma = tuple(1.0 if k < 2 * noisy_shells else 0.0 for k in range(n))
    return SdeSystem(PolyVectorField(comps), sigma, f"sabra_J{J}")
