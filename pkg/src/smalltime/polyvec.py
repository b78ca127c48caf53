"""Exact multivariate polynomials and polynomial vector fields.

Coefficients are :class:`fractions.Fraction`; floats appear only when a field
is compiled for numerical evaluation (:class:`CompiledPolys`).

Monomials are keyed by exponent tuples. The canonical ordering is graded
lexicographic (higher total degree first, then lexicographically larger
exponent vectors first), which makes serialization reproducible.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .scaling import INF, ZERO, Scaling, add, scalar_mul, smin

__all__ = [
    "Monomial",
    "Polynomial",
    "PolyVectorField",
    "CompiledPolys",
    "as_fraction",
    "normalize",
    "lie_bracket",
    "relative_degree",
    "br",
    "monomial_scaling",
    "poly_scaling",
    "poly_scaling_proj1",
    "field_scaling",
    "homogeneous_split",
]


def as_fraction(value) -> Fraction:
    """Exact rational from int, Fraction, decimal string, ``"p/q"`` string or float.

    Floats go through ``repr`` so that ``0.1`` becomes ``1/10`` rather than its
    binary expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a coefficient")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite coefficient {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, np.integer):
        return Fraction(int(value))
    if isinstance(value, np.floating):
        return as_fraction(float(value))
    raise TypeError(f"cannot interpret {value!r} as a rational")


class Monomial(NamedTuple):
    coeff: Fraction
    exponents: tuple


def _glex_key(exps):
    return (-sum(exps), tuple(-e for e in exps))


def _fmt_coeff(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


class Polynomial:
    """Polynomial in ``nvars`` variables, always held in standard form."""

    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping | Iterable = ()):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        self.nvars = int(nvars)
        items = terms.items() if isinstance(terms, Mapping) else ((e, c) for c, e in terms)
        merged: dict[tuple, Fraction] = {}
        for exps, coeff in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.nvars:
                raise ValueError(f"exponent vector {exps} has wrong length (expected {self.nvars})")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            merged[exps] = merged.get(exps, Fraction(0)) + as_fraction(coeff)
        self._terms = {e: c for e, c in merged.items() if c != 0}
        self._hash = None

    # constructors -------------------------------------------------------
    @classmethod
    def zero(cls, nvars):
        return cls(nvars)

    @classmethod
    def constant(cls, nvars, c):
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars, i, power=1):
        e = [0] * nvars
        e[i] = power
        return cls(nvars, {tuple(e): 1})

    @classmethod
    def monomial(cls, coeff, exps):
        return cls(len(exps), {tuple(exps): coeff})

    # structure ----------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def monomials(self) -> list[Monomial]:
        return [Monomial(self._terms[e], e) for e in sorted(self._terms, key=_glex_key)]

    def __iter__(self):
        return iter(self.monomials())

    def __len__(self):
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self._terms)

    def is_monomial(self) -> bool:
        return len(self._terms) == 1

    def constant_term(self) -> Fraction:
        return self._terms.get((0,) * self.nvars, Fraction(0))

    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=-1)

    def support(self) -> frozenset:
        """Indices of variables that actually occur."""
        return frozenset(i for e in self._terms for i, k in enumerate(e) if k)

    def coefficient(self, exps) -> Fraction:
        return self._terms.get(tuple(exps), Fraction(0))

    # arithmetic ---------------------------------------------------------
    def _check(self, other):
        if other.nvars != self.nvars:
            raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        return Polynomial.constant(self.nvars, as_fraction(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            c = as_fraction(other)
            return Polynomial(self.nvars, {e: c * v for e, v in self._terms.items()})
        self._check(other)
        out: dict[tuple, Fraction] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1 / as_fraction(scalar))

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("power must be a nonnegative int")
        result = Polynomial.constant(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self.nvars == other.nvars and self._terms == other._terms
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    # calculus -----------------------------------------------------------
    def diff(self, i: int) -> "Polynomial":
        out = {}
        for e, c in self._terms.items():
            k = e[i]
            if k:
                e2 = list(e)
                e2[i] = k - 1
                out[tuple(e2)] = c * k
        return Polynomial(self.nvars, out)

    def directional(self, v: Sequence) -> "Polynomial":
        """Derivative along the constant direction ``v``."""
        out = Polynomial.zero(self.nvars)
        for i, vi in enumerate(v):
            vi = as_fraction(vi)
            if vi:
                out = out + self.diff(i) * vi
        return out

    def compose(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute ``subs[i]`` for variable ``i``; all substitutes share one variable count."""
        if len(subs) != self.nvars:
            raise ValueError("need one substitute per variable")
        if not subs:
            return Polynomial(0, self._terms)
        m = subs[0].nvars
        out = Polynomial.zero(m)
        powers: dict[tuple, Polynomial] = {}
        for e, c in self._terms.items():
            term = Polynomial.constant(m, c)
            for i, k in enumerate(e):
                if k:
                    key = (i, k)
                    if key not in powers:
                        powers[key] = subs[i] ** k
                    term = term * powers[key]
            out = out + term
        return out

    def restrict(self, keep: Sequence[int]) -> "Polynomial":
        """Sub-polynomial made of the monomials with the given exponent vectors."""
        keep = set(map(tuple, keep))
        return Polynomial(self.nvars, {e: c for e, c in self._terms.items() if e in keep})

    # evaluation ---------------------------------------------------------
    def evaluate(self, x):
        """Evaluate at a point; exact when every coordinate is int/Fraction."""
        if len(x) != self.nvars:
            raise ValueError(f"point has dimension {len(x)}, expected {self.nvars}")
        exact = all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in x)
        if exact:
            total = Fraction(0)
            for e, c in self._terms.items():
                term = c
                for xi, k in zip(x, e):
                    if k:
                        term *= Fraction(xi) ** k
                total += term
            return total
        xs = [float(v) for v in x]
        return math.fsum(float(c) * math.prod(xi**k for xi, k in zip(xs, e)) for e, c in self._terms.items())

    __call__ = evaluate

    # I/O ----------------------------------------------------------------
    def to_json(self) -> list:
        return [{"c": _fmt_coeff(m.coeff), "e": list(m.exponents)} for m in self.monomials()]

    @classmethod
    def from_json(cls, nvars: int, obj) -> "Polynomial":
        if not isinstance(obj, list):
            raise ValueError("polynomial must be a list of monomials")
        raw = []
        for k, mono in enumerate(obj):
            if not isinstance(mono, dict) or "c" not in mono or "e" not in mono:
                raise ValueError(f"monomial {k}: expected object with keys 'c' and 'e'")
            try:
                c = as_fraction(mono["c"])
            except (ValueError, TypeError, ZeroDivisionError) as exc:
                raise ValueError(f"monomial {k}: bad coefficient {mono['c']!r}") from exc
            e = mono["e"]
            if not isinstance(e, list) or len(e) != nvars or not all(isinstance(v, int) and v >= 0 for v in e):
                raise ValueError(f"monomial {k}: exponent must be a list of {nvars} nonnegative ints")
            raw.append((c, e))
        return normalize(nvars, raw)

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for c, e in self.monomials():
            vars_ = "*".join(f"x{i + 1}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(e) if k)
            mag = abs(c)
            if not vars_:
                body = _fmt_coeff(mag)
            elif mag == 1:
                body = vars_
            else:
                body = f"{_fmt_coeff(mag)}*{vars_}"
            parts.append(("- " if c < 0 else "+ ") + body)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[1:]

    def __repr__(self):
        return f"Polynomial({self.nvars}, {str(self)!r})"


def normalize(nvars: int, raw: Iterable) -> Polynomial:
    """Standard form of a raw list of ``(coeff, exponents)`` pairs."""
    return Polynomial(nvars, list(raw))


class PolyVectorField:
    """Tuple of polynomials ``(Z^1, ..., Z^n)`` in ``n`` variables."""

    __slots__ = ("components", "_hash")

    def __init__(self, components: Sequence[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        n = len(comps)
        for k, p in enumerate(comps):
            if not isinstance(p, Polynomial):
                raise TypeError("components must be Polynomial")
            if p.nvars != n:
                raise ValueError(f"component {k} has {p.nvars} variables, expected {n}")
        self.components = comps
        self._hash = None

    @classmethod
    def zero(cls, n):
        return cls([Polynomial.zero(n)] * n)

    @classmethod
    def constant(cls, values):
        n = len(values)
        return cls([Polynomial.constant(n, v) for v in values])

    @classmethod
    def basis(cls, n, j, scale=1):
        v = [0] * n
        v[j] = scale
        return cls.constant(v)

    @property
    def n(self) -> int:
        return len(self.components)

    def __len__(self):
        return self.n

    def __getitem__(self, j) -> Polynomial:
        return self.components[j]

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other):
        if isinstance(other, PolyVectorField):
            return self.components == other.components
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.components)
        return self._hash

    def _check(self, other):
        if not isinstance(other, PolyVectorField):
            raise TypeError("expected PolyVectorField")
        if other.n != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")

    def __add__(self, other):
        self._check(other)
        return PolyVectorField([a + b for a, b in zip(self, other)])

    def __sub__(self, other):
        self._check(other)
        return PolyVectorField([a - b for a, b in zip(self, other)])

    def __neg__(self):
        return PolyVectorField([-a for a in self])

    def __mul__(self, scalar):
        c = as_fraction(scalar)
        return PolyVectorField([a * c for a in self])

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self)

    def is_constant(self) -> bool:
        return all(p.is_constant() for p in self)

    def constant_value(self) -> tuple:
        if not self.is_constant():
            raise ValueError("field is not constant")
        return tuple(p.constant_term() for p in self)

    def support(self) -> frozenset:
        return frozenset().union(*(p.support() for p in self))

    def degree(self) -> int:
        return max(p.degree() for p in self)

    def evaluate(self, x) -> np.ndarray:
        """Float evaluation at a single point."""
        if len(x) != self.n:
            raise ValueError(f"point has dimension {len(x)}, expected {self.n}")
        return np.array([p.evaluate([float(v) for v in x]) for p in self], dtype=float)

    def evaluate_exact(self, x) -> tuple:
        if len(x) != self.n:
            raise ValueError(f"point has dimension {len(x)}, expected {self.n}")
        xs = [as_fraction(v) for v in x]
        return tuple(p.evaluate(xs) for p in self)

    __call__ = evaluate

    def jacobian(self) -> list:
        """``J[i][j] = dZ^i/dx^j`` as polynomials."""
        return [[p.diff(j) for j in range(self.n)] for p in self]

    def directional(self, v) -> "PolyVectorField":
        """``(DZ) v`` for a constant vector ``v``; equals the bracket with the constant field ``v``."""
        if len(v) != self.n:
            raise ValueError("direction has wrong dimension")
        return PolyVectorField([p.directional(v) for p in self])

    def compose(self, subs) -> "PolyVectorField":
        return PolyVectorField([p.compose(subs) for p in self])

    def compile(self) -> "CompiledPolys":
        return CompiledPolys.from_polys(self.components, self.n)

    def to_json(self) -> list:
        return [p.to_json() for p in self]

    @classmethod
    def from_json(cls, n: int, obj) -> "PolyVectorField":
        if not isinstance(obj, list) or len(obj) != n:
            raise ValueError(f"drift must be a list of {n} polynomials")
        comps = []
        for j, poly in enumerate(obj):
            try:
                comps.append(Polynomial.from_json(n, poly))
            except ValueError as exc:
                raise ValueError(f"drift[{j}]: {exc}") from exc
        return cls(comps)

    def __str__(self):
        return "(" + ", ".join(str(p) for p in self) + ")"

    def __repr__(self):
        return f"PolyVectorField{self}"


def lie_bracket(X: PolyVectorField, Y: PolyVectorField) -> PolyVectorField:
    """Commutator ``[X, Y] = (DY) X - (DX) Y``."""
    X._check(Y)
    n = X.n
    out = []
    for i in range(n):
        acc = Polynomial.zero(n)
        for j in range(n):
            if not X[j].is_zero():
                acc = acc + Y[i].diff(j) * X[j]
            if not Y[j].is_zero():
                acc = acc - X[i].diff(j) * Y[j]
        out.append(acc)
    return PolyVectorField(out)


def _as_direction(V, n) -> tuple:
    if isinstance(V, PolyVectorField):
        if not V.is_constant():
            raise ValueError("relative degree needs a constant field")
        v = V.constant_value()
    else:
        v = tuple(as_fraction(c) for c in V)
    if len(v) != n:
        raise ValueError("direction has wrong dimension")
    return v


def relative_degree(R: PolyVectorField, V) -> int:
    """Top power of ``lam`` in ``R(x + lam*v)``.

    ``V`` is a constant field or a plain vector. The zero field has relative
    degree 0 by convention (check ``R.is_zero()`` to tell the cases apart).
    """
    v = _as_direction(V, R.n)
    d = 0
    cur = R.directional(v)
    while not cur.is_zero():
        d += 1
        cur = cur.directional(v)
    return d


def br(V, R: PolyVectorField) -> PolyVectorField:
    """Leading bracket ``ad_V^d(R) / d!`` with ``d`` the relative degree."""
    v = _as_direction(V, R.n)
    d = relative_degree(R, v)
    cur = R
    for _ in range(d):
        cur = cur.directional(v)
    return cur * Fraction(1, math.factorial(d))


# scalings of polynomials --------------------------------------------------

def monomial_scaling(exps, assign: Sequence[Scaling]) -> Scaling:
    s = ZERO
    for k, a in zip(exps, assign):
        s = add(s, scalar_mul(k, a))
    return s


def poly_scaling(p: Polynomial, assign: Sequence[Scaling]) -> Scaling:
    """Dominance-minimum of the monomial scalings (``INF`` for the zero polynomial)."""
    _check_assign(p, assign)
    return smin(monomial_scaling(e, assign) for e in p.terms)


def poly_scaling_proj1(p: Polynomial, assign: Sequence[Scaling]):
    """Minimum of the first components only; ``math.inf`` if every monomial is infinite."""
    _check_assign(p, assign)
    return min((monomial_scaling(e, assign).proj1 for e in p.terms), default=math.inf)


def field_scaling(Z: PolyVectorField, assign: Sequence[Scaling]) -> Scaling:
    return smin(poly_scaling(p, assign) for p in Z)


def _check_assign(p, assign):
    if len(assign) != p.nvars:
        raise ValueError(f"need {p.nvars} scalings, got {len(assign)}")


def homogeneous_split(p: Polynomial, assign: Sequence[Scaling], proj1_only: bool = False):
    """Split ``p`` into its scaling-minimal part and the rest.

    Parameters
    ----------
    p : Polynomial
        Nonzero polynomial.
    assign : sequence of Scaling
        One scaling per variable.
    proj1_only : bool
        Compare only first components, so the leading part collects every
        monomial whose power of ``eps`` is minimal.

    Returns
    -------
    (Polynomial, Polynomial)
        ``(leading, rest)`` with ``leading + rest == p``.
    """
    _check_assign(p, assign)
    if p.is_zero():
        raise ValueError("homogeneous_split of the zero polynomial")
    scal = {e: monomial_scaling(e, assign) for e in p.terms}
    if proj1_only:
        best = min(s.proj1 for s in scal.values())
        lead = [e for e, s in scal.items() if s.proj1 == best]
    else:
        best = smin(scal.values())
        lead = [e for e, s in scal.items() if s == best]
    if best == INF or best == math.inf:
        raise ValueError("polynomial has infinite scaling; no leading part")
    lead_set = set(lead)
    terms = p.terms
    leading = Polynomial(p.nvars, {e: terms[e] for e in lead_set})
    rest = Polynomial(p.nvars, {e: c for e, c in terms.items() if e not in lead_set})
    return leading, rest


# numeric evaluation -------------------------------------------------------

class CompiledPolys:
    """Vectorized float evaluator for ``K`` polynomials in ``nvars`` variables.

    Calling it on an array of shape ``(..., nvars)`` returns ``(..., K)``.
    Build it with :meth:`from_polys` or directly from ``(row, exponents, coeff)``
    triples when coefficients are already floats.
    """

    def __init__(self, terms: Iterable, K: int, nvars: int):
        rows, exps, coefs = [], [], []
        for k, e, c in terms:
            rows.append(k)
            exps.append(tuple(e))
            coefs.append(float(c))
        self.nvars = nvars
        self.K = K
        self.exps = np.array(exps, dtype=np.int64).reshape(-1, nvars)
        self.coef = np.array(coefs, dtype=float)
        self.matrix = np.zeros((len(coefs), K))
        self.matrix[np.arange(len(coefs)), np.array(rows, dtype=np.int64)] = self.coef
        self._mono = [tuple((i, int(k)) for i, k in enumerate(e) if k) for e in self.exps]
        self._flat = list(zip(rows, [float(c) for c in coefs], self._mono))

    @classmethod
    def from_polys(cls, polys: Sequence[Polynomial], nvars: int) -> "CompiledPolys":
        terms = []
        for k, p in enumerate(polys):
            if p.nvars != nvars:
                raise ValueError("variable count mismatch")
            terms.extend((k, e, c) for e, c in p.terms.items())
        return cls(terms, len(polys), nvars)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        if self.coef.size == 0:
            return np.zeros(lead + (self.K,))
        if x.ndim == 1:
            # scalar path: plain floats beat array overhead for a single point
            xs = x.tolist()
            out = [0.0] * self.K
            for row, c, factors in self._flat:
                for i, k in factors:
                    c *= xs[i] ** k
                out[row] += c
            return np.array(out)
        cache = {}

        def power(i, k):
            key = (i, k)
            if key not in cache:
                if k == 1:
                    cache[key] = x[..., i]
                else:
                    half = power(i, k // 2)
                    sq = half * half
                    cache[key] = sq * x[..., i] if k % 2 else sq
            return cache[key]

        ones = np.ones(lead)
        cols = []
        for factors in self._mono:
            col = ones
            for i, k in factors:
                col = col * power(i, k)
            cols.append(col)
        return np.stack(cols, axis=-1) @ self.matrix
