"""Controllability tools for ``x' = Q(x) + sigma f'``.

* :func:`gramian` integrates the trajectory together with ``K' = -K DQ``,
  ``J' = DQ J`` and ``G' = K sigma sigma^T K^T``.
* :func:`malliavin_mc` samples the covariance of the augmented system in
  which a Brownian motion drives ``y`` through ``lam * sigma * W``.
* :func:`hormander_rank` evaluates the iterated bracket list at a point.
* :func:`component_homogeneity` and :func:`direction_certificate` relate
  controls ``f`` and ``eps*f`` for limit fields with monomial components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .numerics import NumericalError, PiecewiseLinearControl, flow, integrate_adaptive, rk4_batch
from .polyvec import CompiledPolys, PolyVectorField, as_fraction, lie_bracket

__all__ = [
    "ControlProblem",
    "GramianReport",
    "MalliavinReport",
    "HormanderReport",
    "ComponentHomogeneity",
    "DirectionCertificate",
    "gramian",
    "malliavin_mc",
    "hormander_rank",
    "component_homogeneity",
    "direction_certificate",
    "transfer_inference",
    "random_controls",
]


@dataclass(frozen=True)
class ControlProblem:
    Q: PolyVectorField
    sigma: tuple
    x0: tuple = None

    def __post_init__(self):
        n = self.Q.n
        sig = tuple(float(s) for s in self.sigma)
        if len(sig) != n:
            raise ValueError("sigma has the wrong length")
        object.__setattr__(self, "sigma", sig)
        x0 = (0.0,) * n if self.x0 is None else tuple(float(v) for v in self.x0)
        if len(x0) != n:
            raise ValueError("x0 has the wrong length")
        object.__setattr__(self, "x0", x0)

    @property
    def n(self) -> int:
        return self.Q.n

    @classmethod
    def from_result(cls, result, x0=None) -> "ControlProblem":
        """Limit control problem of a propagation result (drift ``P_L`` or ``P_D``)."""
        return cls(result.limit_drift, result.system.sigma, x0)


def _jacobian_compiled(Q: PolyVectorField) -> CompiledPolys:
    return CompiledPolys.from_polys([p for row in Q.jacobian() for p in row], Q.n)


@dataclass
class GramianReport:
    G: np.ndarray
    min_eig: float
    invertible: bool
    tol: float
    kj_error: float
    t: float

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.G))

    def to_json(self) -> dict:
        return {
            "G": self.G.tolist(),
            "det": self.det,
            "min_eig": self.min_eig,
            "invertible": self.invertible,
            "tol": self.tol,
            "kj_error": self.kj_error,
            "t": self.t,
        }


def _is_invertible(M: np.ndarray, rel_tol: float):
    eig = np.linalg.eigvalsh((M + M.T) / 2)
    tr = float(np.trace(M))
    thresh = rel_tol * tr / M.shape[0]
    return float(eig[0]), bool(tr > 0 and eig[0] > thresh), thresh


def gramian(prob: ControlProblem, f: PiecewiseLinearControl | None, t: float, rel_tol: float = 1e-8,
            rtol: float = 1e-11, atol: float = 1e-13) -> GramianReport:
    """Controllability Gramian ``G_t(f, x0) = int_0^t K_s sigma sigma^T K_s^T ds``.

    Parameters
    ----------
    prob : ControlProblem
    f : PiecewiseLinearControl or None
        Control (``None`` for ``f = 0``); its slope is zero past its horizon.
    t : float
        Final time in ``(0, 1]``.
    rel_tol : float
        ``G`` counts as invertible when its smallest eigenvalue exceeds
        ``rel_tol * trace(G) / n``.

    Returns
    -------
    GramianReport
        Includes ``max |K J - I|`` as a check on the adjoint integration.
    """
    if not (0 < t <= 1):
        raise ValueError("t must lie in (0, 1]")
    n = prob.n
    Fq = prob.Q.compile()
    DQ = _jacobian_compiled(prob.Q)
    sig = np.array(prob.sigma)
    S = np.diag(sig**2)
    if f is None:
        f = PiecewiseLinearControl.zero(n, t)
    nn = n * n

    def rhs_factory(u):
        def rhs(_, z):
            x = z[:n]
            K = z[n : n + nn].reshape(n, n)
            J = z[n + nn : n + 2 * nn].reshape(n, n)
            A = DQ(x).reshape(n, n)
            return np.concatenate([Fq(x) + u, (-K @ A).ravel(), (A @ J).ravel(), (K @ S @ K.T).ravel()])

        return rhs

    z = np.concatenate([np.array(prob.x0), np.eye(n).ravel(), np.eye(n).ravel(), np.zeros(nn)])
    events = np.union1d([0.0, t], f.breakpoints[f.breakpoints < t])
    h = None
    for a, b in zip(events[:-1], events[1:]):
        z, h, alive = integrate_adaptive(rhs_factory(sig * f.slope(a)), z, a, b, h, rtol, atol)
        if not alive:
            raise NumericalError("controlled trajectory exploded before t")
    K = z[n : n + nn].reshape(n, n)
    J = z[n + nn : n + 2 * nn].reshape(n, n)
    G = z[n + 2 * nn :].reshape(n, n)
    kj = float(np.max(np.abs(K @ J - np.eye(n))))
    if kj > 1e-8:
        raise NumericalError(f"K J deviates from the identity by {kj:.3g}")
    G = (G + G.T) / 2
    min_eig, inv, thresh = _is_invertible(G, rel_tol)
    return GramianReport(G, min_eig, inv, thresh, kj, float(t))


# Malliavin covariance -----------------------------------------------------

@dataclass
class MalliavinReport:
    invertible_freq: float
    event_freq: float
    joint_freq: float
    crosscheck_ok: bool
    n_crosschecked: int
    min_eig_rel: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "invertible_freq": self.invertible_freq,
            "event_freq": self.event_freq,
            "joint_freq": self.joint_freq,
            "crosscheck_ok": self.crosscheck_ok,
            "n_crosschecked": self.n_crosschecked,
            "min_eig_rel": self.min_eig_rel,
            "config": self.config,
        }


def malliavin_mc(prob: ControlProblem, lam: float, t: float, trials: int, seed: int, steps: int = 200,
                 substeps: int = 4, rel_tol: float = 1e-8, crosscheck: bool = True) -> MalliavinReport:
    """Monte-Carlo frequency of an invertible Malliavin covariance.

    Each trial draws an ``n``-dimensional Brownian path ``W`` on ``[0, 1]``
    (``steps`` intervals, held constant on each interval, its own child of
    ``SeedSequence(seed)``) and integrates ``y' = Q(y) + lam sigma W`` with the
    ``2n x 2n`` equation ``K' = -K [[0, 0], [lam sigma, DQ(y)]]`` and
    ``C' = K diag(I, 0) K^T`` up to ``t``. Trials with invertible ``C`` are
    re-checked by computing the Gramian for ``f = lam * int W``.

    Returns
    -------
    MalliavinReport
        ``event_freq`` is the frequency of ``sup_[0,1] |W| <= sqrt(2)`` and
        ``joint_freq`` that of the event together with invertibility.
    """
    if lam <= 0 or trials < 1:
        raise ValueError("need lam > 0 and trials >= 1")
    if not (0 < t <= 1):
        raise ValueError("t must lie in (0, 1]")
    n = prob.n
    m = 2 * n
    Fq = prob.Q.compile()
    DQ = _jacobian_compiled(prob.Q)
    sig = np.array(prob.sigma)
    grid = np.linspace(0.0, 1.0, steps + 1)
    Ws = np.empty((trials, steps + 1, n))
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.default_rng(child)
        inc = rng.standard_normal((steps, n)) * math.sqrt(1.0 / steps)
        Ws[i, 0] = 0.0
        Ws[i, 1:] = np.cumsum(inc, axis=0)
    event = np.max(np.linalg.norm(Ws, axis=2), axis=1) <= math.sqrt(2.0)

    n_int = int(math.ceil(t * steps - 1e-9))
    edges = np.minimum(grid[: n_int + 1], t)
    edges[-1] = t
    B = trials
    y = np.broadcast_to(np.array(prob.x0), (B, n)).copy()
    K = np.broadcast_to(np.eye(m), (B, m, m)).copy()
    C = np.zeros((B, m, m))
    lam_sig = lam * np.diag(sig)

    def deriv(y, K, Wk):
        A = np.zeros((B, m, m))
        A[:, n:, :n] = lam_sig
        A[:, n:, n:] = DQ(y).reshape(B, n, n)
        dy = Fq(y) + lam * sig * Wk
        dK = -np.einsum("bij,bjk->bik", K, A)
        Kx = K[:, :, :n]
        dC = np.einsum("bik,bjk->bij", Kx, Kx)
        return dy, dK, dC

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_int):
            Wk = Ws[:, k, :]
            h = (edges[k + 1] - edges[k]) / substeps
            for _ in range(substeps):
                a1 = deriv(y, K, Wk)
                a2 = deriv(y + h / 2 * a1[0], K + h / 2 * a1[1], Wk)
                a3 = deriv(y + h / 2 * a2[0], K + h / 2 * a2[1], Wk)
                a4 = deriv(y + h * a3[0], K + h * a3[1], Wk)
                y = y + h / 6 * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0])
                K = K + h / 6 * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1])
                C = C + h / 6 * (a1[2] + 2 * a2[2] + 2 * a3[2] + a4[2])

    invertible = np.zeros(B, dtype=bool)
    rel = []
    for b in range(B):
        Cb = C[b]
        if not np.all(np.isfinite(Cb)):
            rel.append(float("nan"))
            continue
        e0, ok, _ = _is_invertible(Cb, rel_tol)
        invertible[b] = ok
        tr = float(np.trace(Cb))
        rel.append(e0 / (tr / m) if tr > 0 else 0.0)

    checked, all_ok = 0, True
    if crosscheck:
        for b in np.nonzero(invertible)[0]:
            f = PiecewiseLinearControl(edges, lam * Ws[b, :n_int, :])
            rep = gramian(prob, f, t, rel_tol=rel_tol)
            checked += 1
            all_ok &= rep.invertible
    config = {"lam": lam, "t": t, "trials": trials, "seed": seed, "steps": steps, "substeps": substeps, "rel_tol": rel_tol}
    return MalliavinReport(
        invertible_freq=float(invertible.mean()),
        event_freq=float(event.mean()),
        joint_freq=float((invertible & event).mean()),
        crosscheck_ok=bool(all_ok),
        n_crosschecked=checked,
        min_eig_rel=rel,
        config=config,
    )


# bracket list -------------------------------------------------------------

@dataclass
class HormanderReport:
    rank: int
    spanning: bool
    n_fields: int
    depth: int
    point: list

    def to_json(self) -> dict:
        return {"rank": self.rank, "spanning": self.spanning, "n_fields": self.n_fields, "depth": self.depth, "point": self.point}


def _rank_exact(rows: list) -> int:
    rows = [list(r) for r in rows if any(r)]
    if not rows:
        return 0
    ncol = len(rows[0])
    rank = 0
    for col in range(ncol):
        piv = next((i for i in range(rank, len(rows)) if rows[i][col] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        p = rows[rank]
        for i in range(len(rows)):
            if i != rank and rows[i][col] != 0:
                fac = rows[i][col] / p[col]
                rows[i] = [a - fac * b for a, b in zip(rows[i], p)]
        rank += 1
        if rank == len(rows):
            break
    return rank


def _bracket_levels(Q: PolyVectorField, sigma: Sequence, depth: int):
    """Yield the new (nonzero, unrepeated) fields of each nesting level in turn."""
    n = Q.n
    Zs = [PolyVectorField.basis(n, j, as_fraction(float(s))) for j, s in enumerate(sigma) if s > 0]
    gens = [Q] + Zs
    seen = set()

    def fresh(F):
        if F.is_zero() or F in seen or (-F) in seen:
            return False
        seen.add(F)
        return True

    level = [Z for Z in Zs if fresh(Z)]
    yield level
    if depth < 2:
        return
    level = [F for F in (lie_bracket(A, Bf) for A in gens for Bf in gens) if fresh(F)]
    yield level
    for _ in range(3, depth + 1):
        level = [F for F in (lie_bracket(A, Cf) for A in level for Cf in gens) if fresh(F)]
        if not level:
            return
        yield level


def bracket_list(Q: PolyVectorField, sigma: Sequence, depth: int) -> list:
    """Fields of the iterated bracket list up to ``depth`` nesting levels.

    Level 1 holds ``Z_l = sigma_l e_l`` (``l >= 1``); level 2 holds
    ``[Z_a, Z_b]`` for ``a, b = 0..n`` with ``Z_0 = Q``; each further level
    brackets the previous one with every ``Z_c``. Zero fields and repeats are
    dropped.
    """
    return [F for level in _bracket_levels(Q, sigma, depth) for F in level]


def hormander_rank(Q: PolyVectorField, sigma: Sequence, x, depth: int | None = None, exact: bool = True) -> HormanderReport:
    """Rank at ``x`` of the bracket list built from ``Q`` and ``sigma_l e_l``.

    With ``exact=True`` the fields are evaluated in rational arithmetic and
    ranked by Gaussian elimination; otherwise an SVD with tolerance ``1e-10``
    (relative to the largest singular value) is used. Levels are added one at
    a time and construction stops once the rank is full, so ``n_fields`` counts
    only the fields actually built.
    """
    n = Q.n
    depth = n + 1 if depth is None else int(depth)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    xs = [as_fraction(float(v)) if not isinstance(v, (int, Fraction)) else Fraction(v) for v in x]
    xf = np.asarray(x, dtype=float)
    rows, count, rank = [], 0, 0
    for level in _bracket_levels(Q, sigma, depth):
        count += len(level)
        if exact:
            rows.extend(F.evaluate_exact(xs) for F in level)
            rank = _rank_exact(rows)
        else:
            rows.extend(F.evaluate(xf) for F in level)
            if rows:
                sv = np.linalg.svd(np.array(rows, dtype=float), compute_uv=False)
                rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0])))
        if rank == n:
            break
    return HormanderReport(rank, rank == n, count, depth, [float(v) for v in x])


# component homogeneity ----------------------------------------------------

@dataclass
class ComponentHomogeneity:
    is_ch: bool | None
    alphas: tuple | None
    method: str
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "is_ch": self.is_ch,
            "alphas": None if self.alphas is None else [str(a) for a in self.alphas],
            "method": self.method,
            "detail": self.detail,
        }


def _monomial_alphas(Q: PolyVectorField, sigma):
    n = Q.n
    alpha = [None] * n
    for j in range(n):
        if sigma[j] > 0:
            if not Q[j].is_zero():
                return None
            alpha[j] = Fraction(1)
        elif Q[j].is_zero():
            alpha[j] = Fraction(0)
        elif not Q[j].is_monomial():
            return None
    changed = True
    while changed:
        changed = False
        for j in range(n):
            if alpha[j] is None and all(alpha[i] is not None for i in Q[j].support()):
                (_, e), = Q[j].monomials()
                alpha[j] = sum((k * alpha[i] for i, k in enumerate(e) if k), Fraction(0))
                changed = True
    if any(a is None for a in alpha):
        return None
    return tuple(alpha)


def _endpoint(Q, sigma, x0, control, t):
    path = flow(Q, control, x0, np.array([0.0, t]), sigma)
    return path.final


def component_homogeneity(Q: PolyVectorField, sigma: Sequence, t: float = 1.0, seed: int = 0,
                          n_controls: int = 3, rtol: float = 1e-6) -> ComponentHomogeneity:
    """Decide whether ``phi_t^j(Q, eps f) 0 = eps**alpha_j phi_t^j(Q, f) 0``.

    When every noiseless component of ``Q`` is a monomial (and ``Q`` vanishes
    on the noisy ones) the exponents follow from ``alpha_j = 1`` on noisy
    components and ``alpha_j = sum_i k_i alpha_i`` for ``Q^j = c x^k``. Otherwise
    a falsification probe with random controls and ``eps in {1/2, 1/4}`` is
    run; it can only answer ``False`` or ``None`` (inconclusive).
    """
    sig = [float(s) for s in sigma]
    alphas = _monomial_alphas(Q, sig)
    if alphas is not None:
        return ComponentHomogeneity(True, alphas, "monomial")

    n = Q.n
    rng = np.random.default_rng(seed)
    x0 = np.zeros(n)
    fitted = []
    for _ in range(n_controls):
        K = 4
        f = PiecewiseLinearControl(np.linspace(0, t, K + 1), rng.standard_normal((K, n)))
        base = _endpoint(Q, sig, x0, f, t)
        half = _endpoint(Q, sig, x0, f.scaled(0.5), t)
        quarter = _endpoint(Q, sig, x0, f.scaled(0.25), t)
        row = []
        for j in range(n):
            scale = max(1e-12, abs(base[j]))
            if abs(base[j]) < 1e-12:
                if abs(half[j]) > 1e-10 or abs(quarter[j]) > 1e-10:
                    return ComponentHomogeneity(False, None, "probe", f"component {j + 1} vanishes for f but not for eps*f")
                row.append(None)
                continue
            r = half[j] / base[j]
            if r <= 0:
                return ComponentHomogeneity(False, None, "probe", f"component {j + 1} changes sign under scaling")
            a = math.log(r) / math.log(0.5)
            if abs(quarter[j] - 0.25**a * base[j]) > rtol * scale:
                return ComponentHomogeneity(False, None, "probe", f"component {j + 1} is not a power of eps")
            row.append(a)
        fitted.append(row)
    for j in range(n):
        vals = [r[j] for r in fitted if r[j] is not None]
        if vals and max(vals) - min(vals) > 1e-6:
            return ComponentHomogeneity(False, None, "probe", f"exponent of component {j + 1} depends on f")
    return ComponentHomogeneity(None, None, "probe", "numerically consistent with homogeneity; not certified")


def random_controls(rng, B: int, n: int, t: float, max_segments: int = 8, lo: float = 1e-2, hi: float = 1e3,
                    active=None):
    """Random piecewise-constant slopes on a common grid of ``max_segments`` cells.

    Each trial uses a random number of distinct segments (merged cells) with
    log-uniform magnitudes in ``[lo, hi]`` and random signs. Returns
    ``(seg_times, slopes)`` with ``slopes.shape == (B, max_segments, n)``.
    ``active`` masks the coordinates that receive control.
    """
    seg_times = np.linspace(0.0, t, max_segments + 1)
    counts = rng.integers(1, max_segments + 1, size=B)
    raw = np.exp(rng.uniform(math.log(lo), math.log(hi), size=(B, max_segments, n)))
    raw *= rng.choice([-1.0, 1.0], size=(B, max_segments, n))
    # cell c of trial b takes the value of segment floor(c * counts_b / max_segments)
    cells = np.arange(max_segments)
    idx = (cells[None, :] * counts[:, None]) // max_segments
    slopes = np.take_along_axis(raw, idx[:, :, None].repeat(n, axis=2), axis=1)
    if active is not None:
        slopes = slopes * np.asarray(active, dtype=float)
    return seg_times, slopes


@dataclass
class DirectionCertificate:
    found: bool
    v: list
    control: PiecewiseLinearControl | None = None
    eps: float | None = None
    value: float | None = None
    endpoint: list | None = None

    def to_json(self) -> dict:
        return {
            "found": self.found,
            "v": self.v,
            "control": None if self.control is None else self.control.to_json(),
            "eps": self.eps,
            "value": self.value,
            "endpoint": self.endpoint,
        }


def direction_certificate(prob: ControlProblem, v, t: float = 1.0, seed: int = 0, trials: int = 4000,
                          alphas=None) -> DirectionCertificate:
    """Find ``f`` in the unit energy ball with ``phi_t(Q, f) 0 . v > 0``.

    Searches random controls for one whose endpoint has the sign pattern of
    ``v`` in every component where ``v`` is nonzero, then rescales it by
    ``eps = min(1, energy**-1/2)``. For a component-homogeneous problem the
    sign pattern survives the rescaling (each component picks up a positive
    factor ``eps**alpha_j``); the rescaled endpoint is recomputed with the
    adaptive integrator and must satisfy the inequality.
    """
    n = prob.n
    v = np.asarray(v, dtype=float)
    sig = np.array(prob.sigma)
    rng = np.random.default_rng(seed)
    F = prob.Q.compile()
    seg_times, slopes = random_controls(rng, trials, n, t, hi=1e2, active=sig > 0)
    X0 = np.broadcast_to(np.array(prob.x0), (trials, n))
    finals = rk4_batch(F, X0, slopes * sig, seg_times, steps=400)
    nz = v != 0
    with np.errstate(invalid="ignore"):
        margin = np.min(np.where(nz, np.sign(v) * finals, np.inf), axis=1)
    order = np.argsort(-np.nan_to_num(margin, nan=-np.inf))
    for b in order[:20]:
        if not margin[b] > 0:
            break
        f = PiecewiseLinearControl(seg_times, slopes[b])
        eps = min(1.0, 1.0 / math.sqrt(f.energy())) if f.energy() > 0 else 1.0
        g = f.scaled(eps)
        end = _endpoint(prob.Q, prob.sigma, np.array(prob.x0), g, t)
        ok_signs = np.all(np.sign(end[nz]) == np.sign(v[nz]))
        val = float(end @ v)
        if val > 0 and ok_signs and g.in_ball(1.0):
            return DirectionCertificate(True, v.tolist(), g, eps, val, end.tolist())
    return DirectionCertificate(False, v.tolist())


def transfer_inference(spans_at_0: bool, homogeneous: bool | None, zero_reachable: bool) -> dict:
    """Apply the transfer rule: bracket list spans at 0, component homogeneity and
    reachability of 0 from all nearby starts (distributional problem) give a
    ball around 0 in the closure of the LIL reachable set."""
    premises = {
        "bracket_list_spans_at_0": bool(spans_at_0),
        "component_homogeneous": homogeneous,
        "zero_reachable_nearby": bool(zero_reachable),
    }
    concl = bool(spans_at_0) and homogeneous is True and bool(zero_reachable)
    return {
        "rule": "spans(0) and component-homogeneous and 0 reachable from a neighbourhood => ball around 0 in cl(A^1_t(0))",
        "premises": premises,
        "conclusion": "ball_in_A1" if concl else None,
    }
