"""Sufficient criterion for a boundary point to be regular for a domain.

The pipeline shifts the boundary point to the origin, computes the
distributional scalings, takes the limit of the rescaled domain, picks an open
target inside that limit and asks whether the limiting control problem can
reach it. The verdict is ``Regular`` or ``Inconclusive`` (with the failing
stage); the criterion is one-sided, so there is no "irregular" verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .control import ControlProblem
from .polyvec import CompiledPolys, Polynomial, as_fraction, homogeneous_split
from .propagation import PropagationResult, SdeSystem, dist_scalings
from .saturation import Target, reachability_probe, saturate

__all__ = [
    "shift_system",
    "GraphTerm",
    "GraphDomain",
    "SuperLevelDomain",
    "LimitDomain",
    "RegularReport",
    "scaled_domain_limit",
    "scaled_membership",
    "check_regular",
    "domain_from_json",
]

DEFAULT_MARGIN = Fraction(1, 10)
MAX_DENOMINATOR = 64

RULE_SHIFT = "the point x* is regular for O iff 0 is regular for O - x* under the shifted drift P(. + x*)"
RULE_CRITERION = (
    "noise propagating + nonempty open O* inside the rescaled domains for all small eps "
    "+ O* reachable by the limiting control problem from 0 => 0 is regular"
)
RULE_EXACT = "exact controllability of the limiting control problem => every open set is reachable"


def shift_system(sys: SdeSystem, x_star: Sequence) -> SdeSystem:
    """System for ``y = x - x*``: drift ``y -> P(y + x*)``, same noise (exact arithmetic)."""
    n = sys.n
    xs = [as_fraction(v) for v in x_star]
    if len(xs) != n:
        raise ValueError(f"shift point has length {len(xs)}, system has dimension {n}")
    if not any(xs):
        return sys
    subs = [Polynomial.variable(n, i) + xs[i] for i in range(n)]
    name = (sys.name or "system") + "_shifted"
    return SdeSystem(sys.drift.compose(subs), sys.sigma, name)


# domains --------------------------------------------------------------------

@dataclass(frozen=True)
class GraphTerm:
    """``coeff * prod_i |y_i| ** exponents[i]``."""

    coeff: Fraction
    exponents: tuple

    def evaluate(self, Y: np.ndarray) -> np.ndarray:
        out = np.full(Y.shape[0], float(self.coeff))
        for i, r in enumerate(self.exponents):
            if r:
                out = out * np.abs(Y[:, i]) ** float(r)
        return out

    def to_json(self) -> dict:
        return {"coeff": str(self.coeff), "exponents": [str(r) for r in self.exponents]}

    def __str__(self):
        factors = [f"|y{i + 1}|" + ("" if r == 1 else f"^({r})") for i, r in enumerate(self.exponents) if r]
        body = "*".join(factors)
        return body if self.coeff == 1 else f"{self.coeff}*{body}"


@dataclass(frozen=True)
class GraphDomain:
    """``O = {y : y[index] > sum_k terms_k(y)}`` in coordinates centred at the boundary point.

    ``index`` is 0-based; terms must not involve ``y[index]`` and each needs
    a positive exponent somewhere, so that ``b(0) = 0``.
    """

    index: int
    terms: tuple
    n: int
    margin: Fraction = DEFAULT_MARGIN

    def __post_init__(self):
        if not 0 <= self.index < self.n:
            raise ValueError("graph index out of range")
        terms = []
        for k, t in enumerate(self.terms):
            if not isinstance(t, GraphTerm):
                coeff, exps = t
                t = GraphTerm(as_fraction(coeff), tuple(as_fraction(r) for r in exps))
            if len(t.exponents) != self.n:
                raise ValueError(f"term {k}: expected {self.n} exponents")
            if any(r < 0 for r in t.exponents):
                raise ValueError(f"term {k}: exponents must be nonnegative")
            if any(r.denominator > MAX_DENOMINATOR for r in t.exponents):
                raise ValueError(f"term {k}: exponent denominators must be <= {MAX_DENOMINATOR}")
            if t.exponents[self.index] != 0:
                raise ValueError(f"term {k}: the graph coordinate cannot appear in the boundary")
            if not any(t.exponents):
                raise ValueError(f"term {k}: constant terms violate b(0) = 0")
            terms.append(t)
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "margin", as_fraction(self.margin))

    def boundary(self, Y: np.ndarray) -> np.ndarray:
        out = np.zeros(Y.shape[0])
        for t in self.terms:
            out = out + t.evaluate(Y)
        return out

    def contains(self, Y: np.ndarray) -> np.ndarray:
        return Y[:, self.index] > self.boundary(Y)

    def to_json(self) -> dict:
        return {"form": "graph", "index": self.index, "n": self.n, "terms": [t.to_json() for t in self.terms],
                "margin": str(self.margin)}


@dataclass(frozen=True)
class SuperLevelDomain:
    """``O = {y : G(y) > 0}`` with ``G(0) = 0``."""

    G: Polynomial
    margin: Fraction = DEFAULT_MARGIN

    def __post_init__(self):
        if self.G.constant_term() != 0:
            raise ValueError("G(0) must vanish: the origin has to lie on the boundary")
        if self.G.is_zero():
            raise ValueError("G must be nonzero")
        object.__setattr__(self, "margin", as_fraction(self.margin))

    @classmethod
    def from_level(cls, H: Polynomial, level, point: Sequence, margin=DEFAULT_MARGIN) -> "SuperLevelDomain":
        """``{H > level}`` seen from ``point``: ``G(y) = H(y + point) - level``."""
        n = H.nvars
        xs = [as_fraction(v) for v in point]
        G = H.compose([Polynomial.variable(n, i) + xs[i] for i in range(n)]) - as_fraction(level)
        return cls(G, margin)

    @property
    def n(self) -> int:
        return self.G.nvars

    def contains(self, Y: np.ndarray) -> np.ndarray:
        return CompiledPolys.from_polys([self.G], self.n)(np.atleast_2d(Y))[:, 0] > 0

    def to_json(self) -> dict:
        return {"form": "superlevel", "n": self.n, "G": self.G.to_json(), "margin": str(self.margin)}


# limit domain ------------------------------------------------------------------

@dataclass
class LimitDomain:
    """Limit of the rescaled domain and the open target ``O*`` chosen inside it.

    ``kind`` is one of HalfSpaceLike, PersistingBoundary, DegeneratePositive,
    DegenerateEmpty. ``target`` is None when no open target is available.
    """

    kind: str
    domain: object
    scalings: tuple
    critical: tuple = ()
    subcritical: tuple = ()
    supercritical: tuple = ()
    leading: Polynomial | None = None
    witness: tuple | None = None
    description: str = ""
    target: Target | None = field(default=None, repr=False)

    @property
    def nonempty(self) -> bool:
        return self.target is not None and self.witness is not None

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "target": self.description,
            "nonempty": self.nonempty,
            "witness": None if self.witness is None else [float(v) for v in self.witness],
        }
        if isinstance(self.domain, GraphDomain):
            out["critical"] = list(self.critical)
            out["subcritical"] = list(self.subcritical)
            out["supercritical"] = list(self.supercritical)
        if self.leading is not None:
            out["leading"] = str(self.leading)
        return out


def _box_margin(Y):
    return 1.0 - np.max(np.abs(Y), axis=-1)


def _graph_limit(dom: GraphDomain, b: Sequence[Fraction]) -> LimitDomain:
    j = dom.index
    crit, sub, sup = [], [], []
    for k, t in enumerate(dom.terms):
        e = sum((r * b[i] for i, r in enumerate(t.exponents)), Fraction(0))
        if e > b[j]:
            sub.append(k)
        elif e == b[j]:
            crit.append(k)
        else:
            sup.append(k)
    delta = float(dom.margin)
    n = dom.n
    if any(dom.terms[k].coeff > 0 for k in sup):
        return LimitDomain("DegenerateEmpty", dom, tuple(b), tuple(crit), tuple(sub), tuple(sup),
                           description="boundary term of lower order with positive coefficient: limit domain is empty")
    if sup:
        # the most dominant negative term takes over: O* = {|y|^r > delta'} inside the box
        def order(k):
            return sum((r * b[i] for i, r in enumerate(dom.terms[k].exponents)), Fraction(0))

        k0 = min(sup, key=order)
        term = dom.terms[k0]
        mono = GraphTerm(Fraction(1), term.exponents)

        def margin(Y):
            return np.minimum(mono.evaluate(Y) - delta, _box_margin(Y))

        w = tuple(0.0 if r == 0 else (1 + delta) / 2 for r in term.exponents)
        w = w if margin(np.array([w]))[0] > 0 else None
        desc = f"{{y in (-1,1)^{n} : {mono} > {dom.margin}}}"
        tgt = Target(lambda Y: margin(Y) > 0, margin, desc, w)
        return LimitDomain("DegeneratePositive", dom, tuple(b), tuple(crit), tuple(sub), tuple(sup), None, w, desc, tgt)
    kind = "PersistingBoundary" if crit else "HalfSpaceLike"
    kept = [dom.terms[k] for k in crit]

    def margin(Y):
        rhs = np.zeros(Y.shape[0])
        for t in kept:
            rhs = rhs + t.evaluate(Y)
        return np.minimum(Y[:, j] - rhs - delta, _box_margin(Y))

    w = [0.0] * n
    w[j] = (1 + delta) / 2
    w = tuple(w)
    w = w if margin(np.array([w]))[0] > 0 else None
    rhs_txt = "".join(f"{t} + " for t in kept)
    desc = f"{{y in (-1,1)^{n} : y{j + 1} > {rhs_txt}{dom.margin}}}"
    tgt = Target(lambda Y: margin(Y) > 0, margin, desc, w) if w is not None else None
    return LimitDomain(kind, dom, tuple(b), tuple(crit), tuple(sub), (), None, w, desc, tgt)


def _superlevel_limit(dom: SuperLevelDomain, b: Sequence[Fraction], seed: int = 0) -> LimitDomain:
    from .scaling import Scaling

    n = dom.n
    assign = [Scaling.of(v, 0) for v in b]
    GD, _ = homogeneous_split(dom.G, assign, proj1_only=True)
    delta = float(dom.margin)
    F = CompiledPolys.from_polys([GD], n)

    def margin(Y):
        return np.minimum(F(Y)[..., 0] - delta, _box_margin(Y))

    rng = np.random.default_rng(seed)
    Y = rng.uniform(-1, 1, size=(20_000, n)) * 0.99
    m = margin(Y)
    k = int(np.argmax(m))
    w = tuple(Y[k].tolist()) if m[k] > 0 else None
    desc = f"{{y in (-1,1)^{n} : {str(GD).replace('x', 'y')} > {dom.margin}}}"
    tgt = Target(lambda Z: margin(Z) > 0, margin, desc, w) if w is not None else None
    kind = "PersistingBoundary" if w is not None else "DegenerateEmpty"
    return LimitDomain(kind, dom, tuple(b), leading=GD, witness=w, description=desc, target=tgt)


def scaled_domain_limit(domain, scalings: Sequence, seed: int = 0) -> LimitDomain:
    """Limit of ``S_eps(O) = {y : eps^b y in O}`` as ``eps -> 0`` and a target ``O*`` in it.

    Parameters
    ----------
    domain : GraphDomain or SuperLevelDomain
    scalings : sequence
        Distributional scalings (``Scaling`` objects or first components).
    seed : int
        Only used to search for a witness point of a super-level target.
    """
    b = []
    for s in scalings:
        v = getattr(s, "proj1", s)
        if v == math.inf or getattr(s, "infinite", False):
            raise ValueError("domain limit needs finite scalings")
        b.append(s.first if hasattr(s, "first") else as_fraction(v))
    if len(b) != domain.n:
        raise ValueError("one scaling per coordinate is required")
    if isinstance(domain, GraphDomain):
        return _graph_limit(domain, b)
    if isinstance(domain, SuperLevelDomain):
        return _superlevel_limit(domain, b, seed)
    raise TypeError("unsupported domain type")


def scaled_membership(domain, scalings: Sequence[Fraction], eps: float, Y: np.ndarray) -> np.ndarray:
    """Membership of the points ``Y`` in ``S_eps(O)``."""
    factors = np.array([eps ** float(v) for v in scalings])
    return np.asarray(domain.contains(Y * factors), dtype=bool)


# pipeline ----------------------------------------------------------------------

@dataclass
class RegularReport:
    verdict: str
    stage: str | None
    evidence: dict

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "stage": self.stage, "evidence": self.evidence}

    def __str__(self):
        return self.verdict if self.stage is None else f"{self.verdict}({self.stage})"


def _containment(lim: LimitDomain, eps_check, samples: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    n = lim.domain.n
    pts = []
    tries = 0
    while sum(len(p) for p in pts) < samples and tries < 50:
        Y = rng.uniform(-1, 1, size=(20 * samples, n))
        pts.append(Y[lim.target(Y)])
        tries += 1
    Y = np.concatenate(pts)[:samples]
    if lim.witness is not None:
        Y = np.vstack([np.array(lim.witness)[None, :], Y])
    frac = {}
    for eps in eps_check:
        frac[str(eps)] = float(np.mean(scaled_membership(lim.domain, lim.scalings, eps, Y)))
    return {"samples": int(len(Y)), "eps": list(eps_check), "fraction_inside": frac,
            "ok": all(v == 1.0 for v in frac.values())}


def check_regular(sys: SdeSystem, x_star: Sequence, domain, seed: int = 0, t: float = 1.0, trials: int = 10_000,
                  eps_check=(1e-4, 1e-6), samples: int = 1000) -> RegularReport:
    """Run the regular-point criterion for the boundary point ``x_star``.

    ``domain`` is written in coordinates centred at ``x_star``. Each stage
    adds its evidence to the report; the first stage that fails makes the
    verdict ``Inconclusive(stage)``.
    """
    ev: dict = {"point": [str(as_fraction(v)) for v in x_star], "rules": [RULE_SHIFT, RULE_CRITERION]}
    shifted = shift_system(sys, x_star)
    ev["shifted_drift"] = str(shifted.drift)
    res: PropagationResult = dist_scalings(shifted)
    ev["propagation"] = res.to_json()
    if not res.propagating:
        return RegularReport("Inconclusive", "propagation", ev)
    if domain.n != sys.n:
        raise ValueError("domain and system dimensions differ")
    lim = scaled_domain_limit(domain, res.scalings, seed=seed)
    ev["domain"] = domain.to_json()
    ev["limit_domain"] = lim.to_json()
    if not lim.nonempty:
        return RegularReport("Inconclusive", "domain", ev)
    cont = _containment(lim, eps_check, samples, seed)
    ev["containment"] = cont
    if not cont["ok"]:
        return RegularReport("Inconclusive", "containment", ev)
    controls = [tuple(1 if k == j else 0 for k in range(sys.n)) for j in shifted.noise_indices]
    sat = saturate(res.limit_drift, controls)
    ev["saturation"] = {"exact_controllable": sat.exact_controllable, "steps": sat.steps,
                        "directions": sat.directions.to_json()}
    if sat.exact_controllable:
        ev["reachability"] = {"method": "saturation", "rule": RULE_EXACT,
                              "basis": [[str(c) for c in v] for v in sat.basis], "det": str(sat.det)}
        return RegularReport("Regular", None, ev)
    prob = ControlProblem(res.limit_drift, shifted.sigma, (0.0,) * sys.n)
    probe = reachability_probe(prob, lim.target, t=t, trials=trials, seed=seed)
    ev["reachability"] = {"method": "probe", "seed": seed, "t": t, **probe.to_json()}
    if not probe.found:
        return RegularReport("Inconclusive", "reachability", ev)
    return RegularReport("Regular", None, ev)


def domain_from_json(obj, n: int):
    """Parse a domain spec; returns ``(domain, point)``.

    Graph: ``{"form": "graph", "index": j, "terms": [{"coeff": c, "exponents": [...]}, ...]}``.
    Super-level: ``{"form": "superlevel", "G": poly}`` or
    ``{"form": "superlevel", "H": poly, "level": c}``. Both accept ``"point"``
    (the boundary point, default 0) and ``"margin"``.
    """
    if not isinstance(obj, dict):
        raise ValueError("domain spec must be a JSON object")
    form = obj.get("form")
    point = obj.get("point", [0] * n)
    if not isinstance(point, list) or len(point) != n:
        raise ValueError(f"domain spec: 'point' must be a list of {n} numbers")
    try:
        point = [as_fraction(v) for v in point]
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ValueError("domain spec: bad entry in 'point'") from exc
    margin = obj.get("margin", DEFAULT_MARGIN)
    if form == "graph":
        if "index" not in obj or "terms" not in obj:
            raise ValueError("domain spec: graph form needs 'index' and 'terms'")
        terms = []
        for k, t in enumerate(obj["terms"]):
            if not isinstance(t, dict) or "coeff" not in t or "exponents" not in t:
                raise ValueError(f"domain spec: terms[{k}] needs 'coeff' and 'exponents'")
            try:
                terms.append((as_fraction(t["coeff"]), [as_fraction(r) for r in t["exponents"]]))
            except (TypeError, ValueError, ZeroDivisionError) as exc:
                raise ValueError(f"domain spec: terms[{k}] has a bad number") from exc
        try:
            return GraphDomain(int(obj["index"]), tuple(terms), n, margin), point
        except ValueError as exc:
            raise ValueError(f"domain spec: {exc}") from exc
    if form == "superlevel":
        try:
            if "G" in obj:
                return SuperLevelDomain(Polynomial.from_json(n, obj["G"]), margin), point
            if "H" in obj and "level" in obj:
                H = Polynomial.from_json(n, obj["H"])
                return SuperLevelDomain.from_level(H, obj["level"], point, margin), point
        except ValueError as exc:
            raise ValueError(f"domain spec: {exc}") from exc
        raise ValueError("domain spec: superlevel form needs 'G' or both 'H' and 'level'")
    raise ValueError("domain spec: 'form' must be 'graph' or 'superlevel'")
