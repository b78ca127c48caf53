"""Reference computations that do not share code paths with the package."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm


def log_size(a1, a2, L):
    """``log`` of ``eps**a1 * (log log 1/eps)**a2`` at ``log(1/eps) = L``."""
    return -float(a1) * L + float(a2) * math.log(math.log(L) if L > math.e else 1.0)


def dominance_less(a, b, L=1e9):
    """Strict dominance via the size of both quantities at a tiny eps."""
    return log_size(*a, L) < log_size(*b, L)


def lorenz_scalings(n):
    """LIL scalings of Lorenz '96 with noise on x1, x2, from the recursion."""
    a = [(Fraction(1, 2), Fraction(1, 2))] * 2
    for _ in range(2, n - 1):
        p, q = a[-1], a[-2]
        a.append((p[0] + q[0] + 1, p[1] + q[1]))
    a.append((a[-1][0] + Fraction(3, 2), a[-1][1] + Fraction(1, 2)))
    return a


def ik_scalings(n):
    return [Fraction(2 * j - 1, 2) for j in range(1, n + 1)]


def linear_gramian(A, sigma, t):
    """``int_0^t e^{-As} S S^T e^{-A^T s} ds`` for ``x' = A x``."""
    S = np.diag(sigma)

    def integrand(s):
        K = expm(-A * s)
        return K @ S @ S.T @ K.T

    val, _ = quad_vec(integrand, 0.0, t, epsabs=1e-13, epsrel=1e-12)
    return val


def numeric_bracket(X, Y, x, h=1e-5):
    """``[X, Y](x) = DY(x) X(x) - DX(x) Y(x)`` with central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size

    def jac(F):
        J = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            J[:, i] = (F(x + e) - F(x - e)) / (2 * h)
        return J

    return jac(Y) @ X(x) - jac(X) @ Y(x)


def degree_in_lambda(R, v, x, max_deg=12):
    """Degree of ``lam -> R(x + lam v)`` from exact finite differences."""
    pts = [R.evaluate_exact([xi + lam * vi for xi, vi in zip(x, v)]) for lam in range(max_deg + 2)]
    deg = 0
    for k in range(1, max_deg + 1):
        # k-th forward difference at 0
        diff = [sum((-1) ** (k - i) * math.comb(k, i) * pts[i][j] for i in range(k + 1)) for j in range(len(pts[0]))]
        if any(diff):
            deg = k
    return deg


def energy_distance_bruteforce(X, Y):
    def mean_dist(A, B):
        return np.mean([np.linalg.norm(a - b) for a in A for b in B])

    return 2 * mean_dist(X, Y) - mean_dist(X, X) - mean_dist(Y, Y)


def rank_numeric(M, tol=1e-9):
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0]))) if s.size else 0
