"""Constructive saturation of a trajectory family ``(V0; V1, ..., Vk)``.

The family starts with the drift flow and one symmetric ray ``x -> x + t*mu``
(``mu`` in ``span(v_j)``) per control direction. Each step brackets every
symmetric ray direction ``v`` against every polynomial flow ``Q`` in the
family: with ``d = deg(Q, v)`` the leading bracket ``B = ad_v^d Q / d!``
enters the family as a new ray when constant, and as a new flow otherwise.
The sign of ``alpha**d`` decides between a two-sided (span) and a one-sided
(cone) parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .control import ControlProblem, random_controls
from .numerics import PiecewiseLinearControl, flow, rk4_batch
from .polyvec import PolyVectorField, as_fraction, br, relative_degree

__all__ = [
    "Ray",
    "DerivedFlow",
    "Family",
    "DirectionSet",
    "SaturationResult",
    "ProbeResult",
    "Target",
    "ball_target",
    "halfspace_target",
    "seed",
    "saturate_step",
    "saturate",
    "reachability_probe",
    "ray_realizability",
    "bracket_limit_check",
    "realizability_report",
]


def _fmt_vec(v) -> str:
    return "(" + ", ".join(str(c) for c in v) + ")"


def _canon(v: Sequence[Fraction], signed: bool) -> tuple:
    """Representative of the ray through ``v`` (of the line through ``v`` if not ``signed``)."""
    lead = next(c for c in v if c != 0)
    scale = abs(lead) if signed else lead
    return tuple(c / scale for c in v)


def _field_canon(F: PolyVectorField, signed: bool):
    for p in F:
        mons = p.monomials()
        if mons:
            lead = mons[0].coeff
            break
    scale = abs(lead) if signed else lead
    return F * (1 / scale)


@dataclass(frozen=True)
class Ray:
    """Ray semigroup ``x -> x + t*mu`` with ``mu`` in ``span(v)`` or ``cone(v)``."""

    direction: tuple
    symmetric: bool
    origin: dict = field(default_factory=dict, compare=False, hash=False)

    def describe(self) -> str:
        return ("span" if self.symmetric else "cone") + _fmt_vec(self.direction)


@dataclass(frozen=True)
class DerivedFlow:
    """Flow of ``beta * field`` with ``beta`` ranging over R (symmetric) or ``[0, inf)``."""

    field: PolyVectorField
    symmetric: bool
    origin: dict = field(default_factory=dict, compare=False, hash=False)

    def describe(self) -> str:
        return ("flow[+-]" if self.symmetric else "flow[+]") + str(self.field)


@dataclass
class Family:
    V0: PolyVectorField
    controls: tuple
    rays: list
    flows: list
    trace: list
    step: int = 1

    @property
    def n(self) -> int:
        return self.V0.n

    def copy(self) -> "Family":
        return Family(self.V0, self.controls, list(self.rays), list(self.flows), list(self.trace), self.step)

    def directions(self) -> "DirectionSet":
        return DirectionSet(
            tuple(r.direction for r in self.rays if r.symmetric),
            tuple(r.direction for r in self.rays if not r.symmetric),
        )

    def size(self) -> int:
        return len(self.rays) + len(self.flows)


@dataclass(frozen=True)
class DirectionSet:
    span: tuple
    cone: tuple

    def has_span(self, v) -> bool:
        v = tuple(as_fraction(c) for c in v)
        return any(_canon(w, False) == _canon(v, False) for w in self.span)

    def has_cone(self, v) -> bool:
        v = tuple(as_fraction(c) for c in v)
        return any(_canon(w, True) == _canon(v, True) for w in self.cone)

    def span_rank(self) -> int:
        return _rank([list(v) for v in self.span])

    def to_json(self) -> dict:
        return {"span": [[str(c) for c in v] for v in self.span], "cone": [[str(c) for c in v] for v in self.cone]}


def _rank(rows) -> int:
    from .control import _rank_exact

    return _rank_exact(rows) if rows else 0


def _det(rows) -> Fraction:
    M = [list(r) for r in rows]
    n = len(M)
    det = Fraction(1)
    for c in range(n):
        piv = next((i for i in range(c, n) if M[i][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            M[c], M[piv] = M[piv], M[c]
            det = -det
        det *= M[c][c]
        for i in range(c + 1, n):
            if M[i][c] != 0:
                fac = M[i][c] / M[c][c]
                M[i] = [a - fac * b for a, b in zip(M[i], M[c])]
    return det


def _add_ray(fam: Family, v, symmetric: bool, origin: dict) -> bool:
    v = tuple(as_fraction(c) for c in v)
    if not any(v):
        return False
    line = _canon(v, False)
    half = _canon(v, True)
    for r in fam.rays:
        if r.symmetric and _canon(r.direction, False) == line:
            return False
    if symmetric:
        fam.rays = [r for r in fam.rays if r.symmetric or _canon(r.direction, False) != line]
        fam.rays.append(Ray(line, True, origin))
        fam.trace.append({**origin, "element": f"span{_fmt_vec(line)}"})
        return True
    opposite = tuple(-c for c in half)
    if any(not r.symmetric and _canon(r.direction, True) == half for r in fam.rays):
        return False
    if any(not r.symmetric and _canon(r.direction, True) == opposite for r in fam.rays):
        # both half-lines are available: concatenating the two ray flows covers the line
        fam.rays = [r for r in fam.rays if r.symmetric or _canon(r.direction, False) != line]
        merged = {**origin, "rule": "opposite-cones"}
        fam.rays.append(Ray(line, True, merged))
        fam.trace.append({**merged, "element": f"span{_fmt_vec(line)}"})
        return True
    fam.rays.append(Ray(half, False, origin))
    fam.trace.append({**origin, "element": f"cone{_fmt_vec(half)}"})
    return True


def _add_flow(fam: Family, F: PolyVectorField, symmetric: bool, origin: dict) -> bool:
    key_signed = _field_canon(F, True)
    key_line = _field_canon(F, False)
    for k, g in enumerate(fam.flows):
        if g.symmetric and _field_canon(g.field, False) == key_line:
            return False
        if not g.symmetric and _field_canon(g.field, True) == key_signed:
            if symmetric:
                fam.flows[k] = DerivedFlow(key_line, True, origin)
                fam.trace.append({**origin, "element": f"flow[+-]{key_line}"})
                return True
            return False
    fam.flows.append(DerivedFlow(key_line if symmetric else key_signed, symmetric, origin))
    fam.trace.append({**origin, "element": ("flow[+-]" if symmetric else "flow[+]") + str(key_line if symmetric else key_signed)})
    return True


def seed(V0: PolyVectorField, controls: Sequence) -> Family:
    """Family with the drift flow and a symmetric ray for each control direction.

    ``controls`` are constant fields or plain vectors; zero directions are
    rejected.
    """
    vecs = []
    for c in controls:
        v = c.constant_value() if isinstance(c, PolyVectorField) else tuple(as_fraction(x) for x in c)
        if len(v) != V0.n:
            raise ValueError("control direction has the wrong dimension")
        if not any(v):
            raise ValueError("zero control direction")
        vecs.append(v)
    fam = Family(V0, tuple(vecs), [], [DerivedFlow(V0, False, {"step": 0, "rule": "drift"})], [], 1)
    fam.trace.append({"step": 0, "rule": "drift", "element": f"flow[+]{V0}"})
    for j, v in enumerate(vecs):
        _add_ray(fam, v, True, {"step": 1, "rule": "control", "control": j + 1})
    return fam


def saturate_step(family: Family) -> Family:
    """One enrichment round; returns a new family (the input is not modified)."""
    fam = family.copy()
    fam.step += 1
    scalable = [r.direction for r in family.rays if r.symmetric]
    for v in scalable:
        for g in family.flows:
            Q = g.field
            if Q.is_zero():
                continue
            d = relative_degree(Q, v)
            if d == 0:
                continue
            B = br(v, Q)
            if B.is_zero():
                continue
            sym = (d % 2 == 1) or g.symmetric
            origin = {"step": fam.step, "rule": "bracket", "V": _fmt_vec(v), "parent": str(Q), "degree": d}
            if B.is_constant():
                _add_ray(fam, B.constant_value(), sym, origin)
            else:
                _add_flow(fam, B, sym, origin)
    return fam


@dataclass
class SaturationResult:
    directions: DirectionSet
    exact_controllable: bool
    basis: tuple
    det: Fraction | None
    trace: list
    steps: int
    fixed_point: bool
    family: Family

    def to_json(self) -> dict:
        return {
            "directions": self.directions.to_json(),
            "exact_controllable": self.exact_controllable,
            "basis_certificate": None
            if not self.exact_controllable
            else {"basis": [[str(c) for c in v] for v in self.basis], "det": str(self.det)},
            "steps": self.steps,
            "fixed_point": self.fixed_point,
            "flows": [g.describe() for g in self.family.flows],
            "trace": [{k: (str(v) if isinstance(v, Fraction) else v) for k, v in e.items()} for e in self.trace],
        }


def _basis(span_vectors, n):
    chosen = []
    for v in span_vectors:
        if _rank([list(w) for w in chosen + [v]]) > len(chosen):
            chosen.append(v)
        if len(chosen) == n:
            break
    return chosen


def saturate(V0: PolyVectorField, controls: Sequence, max_steps: int | None = None) -> SaturationResult:
    """Iterate :func:`saturate_step` until nothing new appears or ``max_steps`` is hit.

    Parameters
    ----------
    V0 : PolyVectorField
        Drift of the control problem.
    controls : sequence
        Constant control directions.
    max_steps : int, optional
        Defaults to ``2 n``.

    Returns
    -------
    SaturationResult
        ``exact_controllable`` is True when the symmetric directions contain a
        basis; the basis and its (nonzero, exact) determinant are included.
    """
    n = V0.n
    max_steps = 2 * n if max_steps is None else int(max_steps)
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    fam = seed(V0, controls)
    fixed = False
    steps = 1
    while steps < max_steps:
        if fam.directions().span_rank() == n:
            break
        nxt = saturate_step(fam)
        steps += 1
        if nxt.size() == fam.size() and nxt.directions() == fam.directions():
            fixed = True
            fam = nxt
            break
        fam = nxt
    dirs = fam.directions()
    basis = _basis(list(dirs.span), n)
    exact = len(basis) == n
    det = _det(basis) if exact else None
    trace = list(fam.trace)
    if exact:
        trace.append({"step": steps, "rule": "exact-controllability", "element": "symmetric rays contain a basis; reachable set is R^n"})
    else:
        trace.append({
            "step": steps,
            "rule": "approximate-reachability",
            "element": "closure of reachable set contains x + span(...) + cone(...) of the listed directions",
        })
    return SaturationResult(dirs, exact, tuple(basis), det, trace, steps, fixed, fam)


# numerical probes -----------------------------------------------------------

@dataclass(frozen=True)
class Target:
    """Open target set: ``contains`` maps states ``(B, n)`` to a mask.

    ``margin`` (optional) is positive exactly inside the set and is used to
    steer the search once plain sampling has failed; ``anchor`` (optional) is
    a point of the set that the search may aim at directly.
    """

    contains: Callable
    margin: Callable | None = None
    description: str = ""
    anchor: tuple | None = None

    def __call__(self, X):
        return self.contains(X)


def ball_target(center, radius: float) -> Target:
    c = np.asarray(center, dtype=float)

    def margin(X):
        return radius - np.linalg.norm(X - c, axis=-1)

    return Target(lambda X: margin(X) > 0, margin, f"ball(center={c.tolist()}, r={radius})", tuple(c.tolist()))


def halfspace_target(normal, offset: float = 0.0) -> Target:
    """``{x : normal . x > offset}``."""
    v = np.asarray(normal, dtype=float)

    def margin(X):
        return X @ v - offset

    return Target(lambda X: margin(X) > 0, margin, f"halfspace({v.tolist()} . x > {offset})")


@dataclass
class ProbeResult:
    found: bool
    trials: int
    control: PiecewiseLinearControl | None = None
    state: list | None = None
    time: float | None = None
    stage: str | None = None

    def to_json(self) -> dict:
        return {
            "found": self.found,
            "trials": self.trials,
            "stage": self.stage,
            "control": None if self.control is None else self.control.to_json(),
            "state": self.state,
            "time": self.time,
        }


_STATE_CAP = 1e6  # fixed-step states beyond this are not trusted as hits


class _Searcher:
    def __init__(self, prob, target, t, steps, sample_every, max_verify):
        self.prob, self.target, self.t = prob, target, t
        self.sig = np.array(prob.sigma)
        self.F = prob.Q.compile()
        self.x0 = np.array(prob.x0)
        self.steps, self.sample_every = steps, sample_every
        self.verify_left = max_verify

    def run(self, seg_times, slopes):
        m, n = slopes.shape[0], self.prob.n
        _, times, samples = rk4_batch(self.F, np.broadcast_to(self.x0, (m, n)), slopes * self.sig, seg_times,
                                      steps=self.steps, sample_every=self.sample_every)
        S = samples.shape[0]
        self.last_samples = samples
        flat = samples.reshape(S * m, n)
        good = np.all(np.isfinite(flat), axis=1) & (np.abs(np.nan_to_num(flat)).max(axis=1) < _STATE_CAP)
        inside = np.zeros(S * m, dtype=bool)
        inside[good] = np.asarray(self.target(flat[good]), dtype=bool)
        score = None
        if self.target.margin is not None:
            sc = np.full(S * m, -np.inf)
            sc[good] = self.target.margin(flat[good])
            self.last_margin = sc.reshape(S, m)
            score = self.last_margin.max(axis=0)
        return times, inside.reshape(S, m), score

    def confirm(self, times, hits, seg_times, slopes):
        """Re-integrate candidate hits with the adaptive solver; return the first that holds."""
        for b in np.nonzero(hits.any(axis=0))[0]:
            if self.verify_left <= 0:
                return None
            self.verify_left -= 1
            tau = float(times[int(np.argmax(hits[:, b]))])
            ctrl = PiecewiseLinearControl(seg_times, slopes[b])
            if tau == 0:
                state = self.x0
            else:
                state = flow(self.prob.Q, ctrl, self.x0, np.array([0.0, tau]), self.prob.sigma).final
            if np.all(np.isfinite(state)) and bool(np.asarray(self.target(state[None, :]))[0]):
                return ctrl, state, tau, int(b)
        return None


def reachability_probe(prob: ControlProblem, target, t: float = 1.0, trials: int = 10_000, seed: int = 0,
                       batch: int = 2000, steps: int = 200, sample_every: int = 5, refine_starts: int = 6,
                       max_verify: int = 50) -> ProbeResult:
    """Search for a control steering ``x0`` into ``target`` within time ``t``.

    Parameters
    ----------
    prob : ControlProblem
    target : Target or callable
        A plain callable is treated as a membership test on ``(B, n)`` states.
    t : float
        Time horizon; any intermediate time counts.
    trials : int
        Number of random controls. They are piecewise constant with at most 8
        pieces and log-uniform magnitudes in ``[1e-2, 1e3]``; the zero control
        comes first.
    seed : int
    refine_starts : int
        When the target has a margin and sampling found nothing, this many
        controls (zero plus the best samples) seed a local shooting search.

    Returns
    -------
    ProbeResult
        A reported hit is always confirmed with the adaptive solver.
    """
    if not isinstance(target, Target):
        target = Target(target)
    n = prob.n
    rng = np.random.default_rng(seed)
    active = np.array(prob.sigma) > 0
    S = _Searcher(prob, target, t, steps, sample_every, max_verify)
    used = 0
    pool, pool_score = [], []
    seg_times = None
    while used < trials:
        m = min(batch, trials - used)
        seg_times, slopes = random_controls(rng, m, n, t, active=active)
        if used == 0:
            slopes[0] = 0.0
        times, hits, score = S.run(seg_times, slopes)
        got = S.confirm(times, hits, seg_times, slopes)
        if got is not None:
            ctrl, state, tau, b = got
            return ProbeResult(True, used + b + 1, ctrl, state.tolist(), tau, "sampling")
        if score is not None:
            keep = np.argsort(score)[-50:]
            pool.append(slopes[keep])
            pool_score.append(score[keep])
        used += m
    if target.margin is None or not pool or refine_starts <= 0:
        return ProbeResult(False, used)
    elite_all = np.concatenate(pool)
    sc_all = np.concatenate(pool_score)
    starts = [np.zeros_like(elite_all[0])] + list(elite_all[np.argsort(sc_all)[::-1][: refine_starts - 1]])
    for z0 in starts:
        got, evals = _shoot(S, seg_times, z0, active)
        used += evals
        if got is not None:
            ctrl, state, tau = got
            return ProbeResult(True, used, ctrl, state.tolist(), tau, "refinement")
    return ProbeResult(False, used)


def _shoot(S: "_Searcher", seg_times, z0, active, beta: float = 50.0, maxiter: int = 60, fd: float = 1e-4):
    """Local search on the slopes of one control.

    With an anchor the terminal state is driven onto it by least squares;
    otherwise a soft-max of the margin over time is maximized.
    """
    from scipy.optimize import least_squares, minimize

    K = z0.shape[0]
    cols = np.nonzero(active)[0]
    p = K * cols.size
    evals = 0
    found = []

    def unpack(Z):
        out = np.zeros((Z.shape[0], K, S.prob.n))
        out[:, :, cols] = Z.reshape(Z.shape[0], K, cols.size)
        return out

    def batch(z, with_fd):
        nonlocal evals
        Z = np.vstack([z, z + fd * np.eye(p)]) if with_fd else z[None, :]
        slopes = unpack(Z)
        times, hits, _ = S.run(seg_times, slopes)
        evals += Z.shape[0]
        if hits[:, 0].any() and not found:
            got = S.confirm(times, hits[:, :1], seg_times, slopes[:1])
            if got is not None:
                found.append(got[:3])
                raise StopIteration
        return S.last_samples, S.last_margin

    def soft(score_samples):
        m = np.max(score_samples, axis=0)
        m = np.where(np.isfinite(m), m, -1e6)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lse = m + np.log(np.nansum(np.exp(beta * (score_samples - m)), axis=0)) / beta
        return np.where(np.isfinite(lse), lse, -1e6)

    z_init = np.clip(z0[:, cols].ravel(), -1e3 + 1, 1e3 - 1)
    anchor = None if S.target.anchor is None else np.asarray(S.target.anchor, dtype=float)
    try:
        if anchor is not None:
            def resid(z):
                X, _ = batch(z, False)
                return np.nan_to_num(X[-1, 0] - anchor, nan=1e6)

            def jac(z):
                X, _ = batch(z, True)
                end = np.nan_to_num(X[-1], nan=1e6)
                return ((end[1:] - end[0]) / fd).T

            least_squares(resid, z_init, jac=jac, bounds=(-1e3, 1e3), x_scale="jac", max_nfev=maxiter)
        else:
            def fg(z):
                _, M = batch(z, True)
                vals = soft(M)
                return -vals[0], -(vals[1:] - vals[0]) / fd

            minimize(fg, z_init, jac=True, method="L-BFGS-B", bounds=[(-1e3, 1e3)] * p, options={"maxiter": maxiter})
    except StopIteration:
        pass
    return (found[0] if found else None), evals


def ray_realizability(V0: PolyVectorField, v, lambdas=(10, 100, 1000), t: float = 1.0, seed: int = 0,
                      n_points: int = 4, alphas=(-1.0, -0.5, 0.5, 1.0), steps: int = 400) -> dict:
    """Error of ``phi_{s/lam}(V0 + lam*alpha*v) x`` against ``x + s*alpha*v``.

    Returns the sup error over ``s`` in ``[0, t]``, sample points ``x`` in the
    unit ball and ``alpha`` for each ``lam``, the products ``C = lam * err``
    and whether ``max C / min C <= 3``.
    """
    n = V0.n
    v = np.array([float(c) for c in v])
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(n_points, n)) / math.sqrt(n)
    F = V0.compile()
    X0 = np.repeat(pts, len(alphas), axis=0)
    A = np.tile(np.array(alphas), n_points)
    errs = []
    for lam in lambdas:
        T = t / lam
        slopes = (lam * A[:, None] * v[None, :])[:, None, :]
        _, times, samples = rk4_batch(F, X0, slopes, np.array([0.0, T]), steps=steps, sample_every=10)
        s = times * lam
        expect = X0[None, :, :] + s[:, None, None] * A[None, :, None] * v[None, None, :]
        errs.append(float(np.nanmax(np.linalg.norm(samples - expect, axis=2))))
    C = [lam * e for lam, e in zip(lambdas, errs)]
    positive = [c for c in C if c > 0]
    ratio = max(positive) / min(positive) if positive else 1.0
    stable = (not positive) or (len(positive) == len(C) and ratio <= 3.0)
    return {"lambdas": list(lambdas), "errors": errs, "C": C, "ratio": ratio, "stable": bool(stable)}


def bracket_limit_check(R: PolyVectorField, v, B: PolyVectorField, d: int, lambdas=(10, 100), seed: int = 0,
                        s_max: float = 0.2, n_points: int = 3, alphas=(-0.5, 0.5), steps: int = 400) -> dict:
    """Compare ``phi_{s/lam^d}(R)(x + lam*alpha*v) - lam*alpha*v`` with ``phi_s(alpha^d B) x``.

    The error (sup over ``s <= s_max``, sample points and ``alpha``) should
    decrease as ``lam`` grows.
    """
    n = R.n
    v = np.array([float(c) for c in v])
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(n_points, n)) / (2 * math.sqrt(n))
    X0 = np.repeat(pts, len(alphas), axis=0)
    A = np.tile(np.array(alphas), n_points)
    FR = R.compile()
    FB = B.compile()
    # reference: flow of alpha^d B, one alpha at a time
    ref_samples = np.empty((steps // 10 + 1, len(X0), n))
    for k, a in enumerate(A):
        coef = a**d
        _, rt, rs = rk4_batch(lambda X: coef * FB(X), X0[k : k + 1], np.zeros((1, 1, n)), np.array([0.0, s_max]),
                              steps=steps, sample_every=10)
        ref_samples[:, k, :] = rs[:, 0, :]
    errs = []
    for lam in lambdas:
        shift = lam * A[:, None] * v[None, :]
        T = s_max / lam**d
        _, times, samples = rk4_batch(FR, X0 + shift, np.zeros((len(X0), 1, n)), np.array([0.0, T]), steps=steps,
                                      sample_every=10)
        w = samples - shift[None, :, :]
        errs.append(float(np.nanmax(np.linalg.norm(w - ref_samples, axis=2))))
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    return {"lambdas": list(lambdas), "errors": errs, "decreasing": bool(decreasing)}


def realizability_report(result: SaturationResult, seed: int = 0) -> list:
    """Numerical soundness checks for every element of a saturated family."""
    fam = result.family
    out = []
    for r in fam.rays:
        o = r.origin
        if o.get("rule") == "control":
            chk = ray_realizability(fam.V0, r.direction, seed=seed)
            out.append({"element": r.describe(), "check": "ray", **chk, "ok": chk["stable"]})
    for item in list(fam.rays) + list(fam.flows[1:]):
        o = item.origin
        if o.get("rule") != "bracket":
            continue
        parent = _lookup_parent(fam, o["parent"])
        if parent is None:
            continue
        v = [Fraction(c) for c in o["V"].strip("()").split(", ")]
        # stored elements are normalized, so recompute the bracket itself
        Bf = br(v, parent)
        chk = bracket_limit_check(parent, v, Bf, o["degree"], seed=seed)
        out.append({"element": item.describe(), "check": "bracket", **chk, "ok": chk["decreasing"]})
    return out


def _lookup_parent(fam: Family, text: str):
    for g in fam.flows:
        if str(g.field) == text:
            return g.field
    return None
