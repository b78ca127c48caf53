"""Controlled ODE flows, Euler-Maruyama paths and distribution checks.

Explosion is data, not an error: once a state leaves the ball of radius
``DEATH_RADIUS`` (or stops being finite) the trajectory is *dead* and every
later state is stored as NaN.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial as TPoly
from scipy.spatial.distance import cdist

from .polyvec import CompiledPolys, PolyVectorField
from .scaling import Scaling, check_epsilon, eval_epsilon

__all__ = [
    "DEATH_RADIUS",
    "NumericalError",
    "Path",
    "PiecewiseLinearControl",
    "flow",
    "rk4_batch",
    "euler_maruyama",
    "em_coupled",
    "scale_map",
    "energy_distance",
    "energy_test",
    "dist_limit_check",
    "DistLimitReport",
]

DEATH_RADIUS = 1e8


class NumericalError(RuntimeError):
    """An integrator could not meet its tolerance within its step budget."""


@dataclass
class Path:
    """Sampled trajectory; rows from ``dead_index`` on are NaN."""

    times: np.ndarray
    states: np.ndarray
    dead_index: int | None = None

    @property
    def dead(self) -> bool:
        return self.dead_index is not None

    @property
    def death_time(self):
        return None if self.dead_index is None else float(self.times[self.dead_index])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def dead_flags(self) -> np.ndarray:
        flags = np.zeros(len(self.times), dtype=bool)
        if self.dead_index is not None:
            flags[self.dead_index :] = True
        return flags

    def to_csv(self, target) -> None:
        """Write ``t, x1..xn, dead`` rows to a path or an open text file."""
        n = self.states.shape[1]
        own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
        fh = open(target, "w", newline="") if own else target
        try:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["dead"])
            for t, row, d in zip(self.times, self.states, self.dead_flags()):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [int(d)])
        finally:
            if own:
                fh.close()


def _mark_dead(states: np.ndarray) -> int | None:
    bad = ~np.all(np.isfinite(states), axis=1) | (np.abs(np.nan_to_num(states, nan=np.inf)).max(axis=1) > DEATH_RADIUS)
    if not bad.any():
        return None
    k = int(np.argmax(bad))
    states[k:] = np.nan
    return k


class PiecewiseLinearControl:
    """Control ``f`` with ``f(0) = 0`` and constant slope on each segment.

    Parameters
    ----------
    breakpoints : array_like, shape (K+1,)
        Strictly increasing, starting at 0.
    slopes : array_like, shape (K, d)
        ``f'`` on each segment; zero after the last breakpoint.
    """

    def __init__(self, breakpoints, slopes):
        bp = np.asarray(breakpoints, dtype=float)
        sl = np.asarray(slopes, dtype=float)
        if sl.ndim == 1:
            sl = sl[:, None]
        if bp.ndim != 1 or bp.size != sl.shape[0] + 1:
            raise ValueError("need one more breakpoint than slope rows")
        if bp[0] != 0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        self.breakpoints = bp
        self.slopes = sl
        self._values = np.vstack([np.zeros(sl.shape[1]), np.cumsum(sl * np.diff(bp)[:, None], axis=0)])

    @classmethod
    def constant(cls, slope, T=1.0):
        return cls([0.0, T], [np.atleast_1d(np.asarray(slope, dtype=float))])

    @classmethod
    def zero(cls, d, T=1.0):
        return cls.constant(np.zeros(d), T)

    @property
    def dim(self) -> int:
        return self.slopes.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    def segment(self, t: float) -> int:
        """Index of the segment containing ``t`` (right-continuous); ``-1`` past the end."""
        if t >= self.breakpoints[-1]:
            return -1
        return int(np.searchsorted(self.breakpoints, t, side="right") - 1)

    def slope(self, t: float) -> np.ndarray:
        k = self.segment(t)
        return np.zeros(self.dim) if k < 0 else self.slopes[k]

    def __call__(self, t: float) -> np.ndarray:
        if t >= self.breakpoints[-1]:
            return self._values[-1].copy()
        k = self.segment(t)
        return self._values[k] + self.slopes[k] * (t - self.breakpoints[k])

    def energy(self) -> float:
        """``0.5 * int |f'|^2``, exact for piecewise-linear ``f``."""
        return float(0.5 * np.sum(np.sum(self.slopes**2, axis=1) * np.diff(self.breakpoints)))

    def in_ball(self, alpha: float) -> bool:
        return self.energy() <= alpha**2 * (1 + 1e-12)

    def scaled(self, c: float) -> "PiecewiseLinearControl":
        return PiecewiseLinearControl(self.breakpoints, self.slopes * c)

    def to_json(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "slopes": self.slopes.tolist()}


# deterministic flows ------------------------------------------------------

def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_adaptive(f, y0, t0, t1, h0=None, rtol=1e-10, atol=1e-12, max_steps=200_000):
    """RK4 with step doubling from ``t0`` to ``t1``.

    Returns ``(y, h_last, alive)``; ``alive`` is False if the state left the
    ball of radius :data:`DEATH_RADIUS`.
    """
    y = np.asarray(y0, dtype=float)
    t = t0
    span = t1 - t0
    if span <= 0:
        return y, h0, True
    h = min(h0 or span / 8, span)
    steps = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while t < t1:
            if steps > max_steps:
                raise NumericalError(f"adaptive RK4 exceeded {max_steps} steps near t={t:.6g}")
            steps += 1
            last = h >= t1 - t
            if last:
                h = t1 - t
            big = _rk4_step(f, t, y, h)
            half = _rk4_step(f, t, y, h / 2)
            small = _rk4_step(f, t + h / 2, half, h / 2)
            if not (np.all(np.isfinite(small)) and np.all(np.isfinite(big))):
                if h < 1e-14 * max(1.0, abs(t1)):
                    return small, h, False
                h /= 4
                continue
            err = np.max(np.abs(small - big)) / 15
            tol = atol + rtol * max(np.max(np.abs(y)), np.max(np.abs(small)))
            if err <= tol:
                t = t1 if last else t + h
                y = small + (small - big) / 15
                if np.max(np.abs(y)) > DEATH_RADIUS:
                    return y, h, False
                fac = 4.0 if err == 0 else min(4.0, max(0.2, 0.9 * (tol / err) ** 0.2))
                h *= fac
            else:
                if h < 1e-14 * max(1.0, abs(t1)):
                    # cannot resolve: treat as blow-up if growing fast, else fail
                    if np.max(np.abs(small)) > 1e4:
                        return small, h, False
                    raise NumericalError(f"step size underflow at t={t:.6g}")
                h *= max(0.1, 0.9 * (tol / err) ** 0.2)
    return y, h, True


def triangular_order(R: PolyVectorField):
    """Order in which each component depends only on earlier ones, or None."""
    n = R.n
    deps = [set(R[j].support()) for j in range(n)]
    if any(j in deps[j] for j in range(n)):
        return None
    order, done = [], set()
    while len(order) < n:
        ready = [j for j in range(n) if j not in done and deps[j] <= done]
        if not ready:
            return None
        order.extend(ready)
        done.update(ready)
    return order


def _exact_segment(R, order, x0, u, taus):
    """States at offsets ``taus`` when components are integrals of earlier ones."""
    n = R.n
    comp = [None] * n
    for j in order:
        acc = TPoly([x0[j], u[j]])
        integrand = TPoly([0.0])
        for c, e in R[j].monomials():
            term = TPoly([float(c)])
            for i, k in enumerate(e):
                if k:
                    term = term * comp[i] ** k
            integrand = integrand + term
        comp[j] = acc + integrand.integ()
    return np.array([[comp[j](tau) for j in range(n)] for tau in taus]), np.array([comp[j](taus[-1]) for j in range(n)])


def flow(R: PolyVectorField, control: PiecewiseLinearControl | None, x0, grid, sigma=None, rtol=1e-10, atol=1e-12, exact=True) -> Path:
    """Solve ``x' = R(x) + sigma * f'(t)`` and sample it on ``grid``.

    Parameters
    ----------
    R : PolyVectorField
    control : PiecewiseLinearControl or None
        ``None`` means ``f = 0``.
    x0 : array_like
    grid : array_like
        Increasing sample times starting at 0.
    sigma : array_like, optional
        Diagonal of the noise matrix; defaults to ones.
    exact : bool
        When ``R`` is triangular (each component depends only on earlier
        components), integrate polynomials in ``t`` exactly on each control
        segment instead of stepping numerically.

    Returns
    -------
    Path
    """
    n = R.n
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and increase strictly")
    sig = np.ones(n) if sigma is None else np.asarray(sigma, dtype=float)
    if control is None:
        control = PiecewiseLinearControl.zero(n, max(grid[-1], 1e-300))
    if control.dim != n:
        raise ValueError("control dimension must match the state dimension")
    x = np.asarray(x0, dtype=float).copy()
    events = np.union1d(grid, control.breakpoints[control.breakpoints <= grid[-1]])
    states = np.full((grid.size, n), np.nan)
    states[0] = x
    order = triangular_order(R) if exact else None
    F = R.compile()

    gi = 1
    h = None
    for a, b in zip(events[:-1], events[1:]):
        u = sig * control.slope(a)
        if order is not None:
            targets = [g for g in grid[gi:] if g <= b]
            taus = [g - a for g in targets] + [b - a]
            with np.errstate(over="ignore", invalid="ignore"):
                rows, x = _exact_segment(R, order, x, u, taus)
            for row in rows[:-1]:
                states[gi] = row
                gi += 1
            alive = np.all(np.isfinite(x)) and np.max(np.abs(x)) <= DEATH_RADIUS
        else:
            x, h, alive = integrate_adaptive(lambda t, y: F(y) + u, x, a, b, h, rtol, atol)
            if gi < grid.size and abs(grid[gi] - b) <= 1e-15 * max(1.0, b) and alive:
                states[gi] = x
                gi += 1
        if not alive:
            break
    dead = _mark_dead(states) if gi == grid.size else None
    if gi < grid.size:
        states[gi:] = np.nan
        dead = gi if dead is None else min(dead, gi)
        states[dead:] = np.nan
    return Path(grid, states, dead)


def rk4_batch(F: Callable, X0: np.ndarray, slopes: np.ndarray, seg_times: np.ndarray, steps: int = 200, sample_every: int | None = None):
    """Fixed-step RK4 for many controlled trajectories ``x' = F(x) + u_k``.

    ``slopes`` has shape ``(B, K, n)`` (the effective drift on each of the
    ``K`` segments given by ``seg_times``). Returns final states and, if
    ``sample_every`` is set, the states every that many steps, shape
    ``(S, B, n)``. Dead trajectories are NaN.
    """
    X = np.array(X0, dtype=float)
    T = seg_times[-1]
    h = T / steps
    samples = [X.copy()] if sample_every else None
    times = [0.0]
    t = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(steps):
            k = min(int(np.searchsorted(seg_times, t + h / 2, side="right") - 1), slopes.shape[1] - 1)
            u = slopes[:, k, :]
            k1 = F(X) + u
            k2 = F(X + h / 2 * k1) + u
            k3 = F(X + h / 2 * k2) + u
            k4 = F(X + h * k3) + u
            X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = ~np.all(np.isfinite(X), axis=1) | (np.nan_to_num(np.abs(X), nan=np.inf).max(axis=1) > DEATH_RADIUS)
            X[bad] = np.nan
            t += h
            if sample_every and (s + 1) % sample_every == 0:
                samples.append(X.copy())
                times.append(t)
    if sample_every:
        return X, np.array(times), np.stack(samples)
    return X


# stochastic paths ---------------------------------------------------------

def _as_compiled(field_) -> CompiledPolys:
    if isinstance(field_, PolyVectorField):
        return field_.compile()
    return field_


@dataclass
class CoupledRun:
    """Terminal states of several systems driven by the same Brownian path."""

    finals: list
    dead: list
    sup_dist: list = field(default_factory=list)
    gronwall_ok: np.ndarray | None = None
    path: np.ndarray | None = None
    times: np.ndarray | None = None


def em_coupled(fields: Sequence, noises: Sequence, x0, T: float, dt: float, n_paths: int, seed: int,
               block: int = 20_000, keep_path: bool = False, remainder=None, lipschitz=None) -> CoupledRun:
    """Euler-Maruyama for systems sharing one Brownian path per trial.

    Parameters
    ----------
    fields : sequence
        Drifts (``PolyVectorField`` or ``CompiledPolys``), all of dimension n.
    noises : sequence of array_like
        Diagonal noise for each system.
    x0 : array_like
        Common initial state.
    T, dt : float
        Horizon and step; the number of steps is ``round(T / dt)``.
    n_paths : int
    seed : int
        Trials are simulated in blocks; block ``b`` draws from the ``b``-th
        child of ``SeedSequence(seed)``, so results do not depend on any
        global state.
    keep_path : bool
        Store the full path (only sensible for few trials).
    remainder, lipschitz : callable, optional
        When both are given, also checks the discrete Gronwall bound
        ``|z - y| <= T * exp(L T) * sup |remainder(z)|`` per trial, with
        ``L`` the largest ``lipschitz(x)`` seen along either path.

    Returns
    -------
    CoupledRun
        ``sup_dist[k]`` is the running sup of ``|x_k - x_0|`` per trial.
    """
    Fs = [_as_compiled(f) for f in fields]
    sigmas = [np.asarray(s, dtype=float) for s in noises]
    n = len(sigmas[0])
    steps = max(1, int(round(T / dt)))
    h = T / steps
    sq = math.sqrt(h)
    children = np.random.SeedSequence(seed).spawn(max(1, math.ceil(n_paths / block)))
    finals = [np.empty((n_paths, n)) for _ in Fs]
    sups = [np.zeros(n_paths) for _ in Fs[1:]]
    gron = None
    if remainder is not None and lipschitz is not None:
        gron = np.zeros(n_paths, dtype=bool)
    path = np.empty((steps + 1, n_paths, n)) if keep_path else None
    x0 = np.asarray(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for b, child in enumerate(children):
            lo, hi = b * block, min(n_paths, (b + 1) * block)
            m = hi - lo
            rng = np.random.default_rng(child)
            Xs = [np.broadcast_to(x0, (m, n)).copy() for _ in Fs]
            if keep_path:
                path[0, lo:hi] = Xs[0]
            rem_max = np.zeros(m)
            lip_max = np.zeros(m)
            for s in range(steps):
                dW = rng.standard_normal((m, n)) * sq
                if gron is not None:
                    rem_max = np.fmax(rem_max, np.linalg.norm(remainder(Xs[1]), axis=1))
                    lip_max = np.fmax(lip_max, np.fmax(lipschitz(Xs[0]), lipschitz(Xs[1])))
                for k, (F, sig) in enumerate(zip(Fs, sigmas)):
                    X = Xs[k] + F(Xs[k]) * h + sig * dW
                    bad = ~np.all(np.isfinite(X), axis=1) | (np.nan_to_num(np.abs(X), nan=np.inf).max(axis=1) > DEATH_RADIUS)
                    X[bad] = np.nan
                    Xs[k] = X
                for k in range(1, len(Fs)):
                    d = np.linalg.norm(Xs[k] - Xs[0], axis=1)
                    sups[k - 1][lo:hi] = np.fmax(sups[k - 1][lo:hi], np.where(np.isnan(d), np.inf, d))
                if keep_path:
                    path[s + 1, lo:hi] = Xs[0]
            for k in range(len(Fs)):
                finals[k][lo:hi] = Xs[k]
            if gron is not None:
                bound = T * np.exp(lip_max * T) * rem_max
                gron[lo:hi] = sups[0][lo:hi] <= bound * (1 + 1e-9) + 1e-12
    dead = [~np.all(np.isfinite(f), axis=1) for f in finals]
    times = np.linspace(0.0, T, steps + 1) if keep_path else None
    return CoupledRun(finals, dead, sups, gron, path, times)


def euler_maruyama(sys, x0, T: float, dt: float, seed: int) -> Path:
    """Single Euler-Maruyama path of ``dx = P(x) dt + sigma dB`` (reproducible from ``seed``)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    run = em_coupled([sys.drift], [sys.sigma], x0, T, dt, 1, seed, keep_path=True)
    states = run.path[:, 0, :].copy()
    dead = _mark_dead(states)
    return Path(run.times, states, dead)


def euler_maruyama_batch(sys, x0, T: float, dt: float, n_paths: int, seed: int) -> np.ndarray:
    """Terminal states of ``n_paths`` independent paths (NaN rows are dead)."""
    return em_coupled([sys.drift], [sys.sigma], x0, T, dt, n_paths, seed).finals[0]


# scaling maps and distances -----------------------------------------------

def scale_map(x, scalings: Sequence[Scaling], eps: float, inverse: bool = False) -> np.ndarray:
    """Divide (or, with ``inverse=True``, multiply) each coordinate by ``eps**scaling_j``."""
    check_epsilon(eps)
    factors = np.array([eval_epsilon(s, eps) for s in scalings])
    x = np.asarray(x, dtype=float)
    return x * factors if inverse else x / factors


def energy_distance(X, Y) -> float:
    """Two-sample energy distance ``2E|X-Y| - E|X-X'| - E|Y-Y'|`` (V-statistic)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return float(2 * cdist(X, Y).mean() - cdist(X, X).mean() - cdist(Y, Y).mean())


def energy_test(X, Y, n_perm: int = 199, seed: int = 0):
    """Permutation test for equal laws; returns ``(statistic, p_value)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Z = np.vstack([X, Y])
    D = cdist(Z, Z)
    nx = len(X)

    def stat(idx):
        a, b = idx[:nx], idx[nx:]
        return 2 * D[np.ix_(a, b)].mean() - D[np.ix_(a, a)].mean() - D[np.ix_(b, b)].mean()

    base = np.arange(len(Z))
    observed = stat(base)
    rng = np.random.default_rng(seed)
    count = sum(stat(rng.permutation(len(Z))) >= observed for _ in range(n_perm))
    return float(observed), float((count + 1) / (n_perm + 1))


@dataclass
class DistLimitReport:
    """Per-``eps`` rows of coupled sup distances and marginal energy distances."""

    rows: list
    config: dict

    @property
    def sup_decreasing(self) -> bool:
        """Medians shrink with ``eps`` (strictly, unless they are all exactly 0)."""
        meds = [r["sup_median"] for r in sorted(self.rows, key=lambda r: -r["eps"])]
        if all(m == 0 for m in meds):
            return True
        return all(b < a for a, b in zip(meds, meds[1:]))

    @property
    def energy_decreasing(self) -> bool:
        vals = [r["energy"] for r in sorted(self.rows, key=lambda r: -r["eps"])]
        return all(b < a for a, b in zip(vals, vals[1:]))

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "sup_decreasing": self.sup_decreasing,
            "energy_decreasing": self.energy_decreasing,
            "config": self.config,
        }


def dist_limit_check(sys, result, eps_list, t: float = 1.0, trials: int = 2000, seed: int = 0,
                     dt: float = 1e-3, energy_samples: int = 1000, n_perm: int = 199) -> DistLimitReport:
    """Compare the rescaled process with its distributional limit.

    For each ``eps``: (i) the coupled process ``z_eps`` (drift ``P_D + R_eps``)
    and the limit ``y`` (drift ``P_D``) are driven by one Brownian path and the
    sup over ``[0, t]`` of ``|z_eps - y|`` is summarized; (ii) the original
    system is simulated up to time ``eps * t`` with step ``eps * dt``, mapped by
    the scaling map, and its law at ``t`` is compared with an independent
    sample of ``y_t`` by energy distance and a permutation test.

    Parameters
    ----------
    sys : SdeSystem
    result : PropagationResult
        Distributional scalings of ``sys``.
    eps_list : sequence of float
    t : float
    trials : int
        Number of coupled pairs per ``eps``.
    seed : int
        The same seed is reused across ``eps`` (common random numbers).
    dt : float
        Step in rescaled time.
    energy_samples : int
        Sample size on each side of the energy-distance comparison.

    Returns
    -------
    DistLimitReport
    """
    from .propagation import DIST, _remainder_field, rescaled_numeric

    if result.mode != DIST or not result.propagating:
        raise ValueError("need distributional scalings of a noise-propagating system")
    n = sys.n
    limit = result.limit_drift.compile()
    jac = CompiledPolys.from_polys([p for row in result.limit_drift.jacobian() for p in row], n)

    def lipschitz(X):
        J = jac(X).reshape(X.shape[:-1] + (n, n))
        return np.linalg.norm(J, ord=2, axis=(-2, -1))

    ss = np.random.SeedSequence(seed)
    s_coupled, s_orig, s_limit, s_perm = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
    zero = np.zeros(n)
    y_ref = em_coupled([limit], [sys.sigma], zero, t, dt, energy_samples, s_limit).finals[0]
    rows = []
    for eps in eps_list:
        eps = check_epsilon(eps)
        zfield = rescaled_numeric(result, eps)
        rem = _remainder_field(result).at(eps)
        run = em_coupled([limit, zfield], [sys.sigma, sys.sigma], zero, t, dt, trials, s_coupled,
                         remainder=rem, lipschitz=lipschitz)
        d = run.sup_dist[0]
        finite = d[np.isfinite(d)]
        orig = em_coupled([sys.drift], [sys.sigma], zero, eps * t, eps * dt, energy_samples, s_orig).finals[0]
        scaled = scale_map(orig, result.scalings, eps)
        ok = np.all(np.isfinite(scaled), axis=1)
        e_stat, p_val = energy_test(scaled[ok], y_ref[np.all(np.isfinite(y_ref), axis=1)], n_perm=n_perm, seed=s_perm)
        rows.append({
            "eps": eps,
            "sup_median": float(np.median(finite)) if finite.size else math.inf,
            "sup_q90": float(np.quantile(finite, 0.9)) if finite.size else math.inf,
            "dead_pairs": int(np.sum(~np.isfinite(d))),
            "gronwall_fraction": float(run.gronwall_ok.mean()),
            "energy": e_stat,
            "energy_pvalue": p_val,
            "energy_reject_5pct": bool(p_val < 0.05),
        })
    config = {"seed": seed, "t": t, "dt": dt, "trials": trials, "energy_samples": energy_samples, "n_perm": n_perm}
    return DistLimitReport(rows, config)
