from fractions import Fraction

import numpy as np
import pytest

from smalltime import systems
from smalltime.control import (
    ControlProblem,
    bracket_list,
    component_homogeneity,
    direction_certificate,
    gramian,
    hormander_rank,
    malliavin_mc,
    random_controls,
    transfer_inference,
)
from smalltime.numerics import PiecewiseLinearControl, flow
from smalltime.polyvec import Polynomial, PolyVectorField
from smalltime.propagation import dist_scalings, lil_scalings

from oracles import linear_gramian, rank_numeric

KOLMO = ControlProblem(systems.kolmogorov().drift, (1.0, 0.0))


def rand_control(n, seed, K=4):
    return PiecewiseLinearControl(np.linspace(0, 1, K + 1), np.random.default_rng(seed).normal(size=(K, n)))


@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_gramian_kolmogorov_closed_form(t):
    rep = gramian(KOLMO, rand_control(2, 0), t)
    ref = np.array([[t, -t**2 / 2], [-t**2 / 2, t**3 / 3]])
    assert np.allclose(rep.G, ref, atol=1e-9)
    assert rep.det == pytest.approx(t**4 / 12, rel=1e-7)
    assert rep.invertible and rep.kj_error < 1e-8


def test_gramian_linear_against_expm_oracle():
    A = np.array([[0.0, 0.0, 0.0], [1.0, -0.5, 0.0], [0.0, 2.0, 0.3]])
    n = 3
    comps = [sum((Polynomial.variable(n, k) * Fraction(A[j, k]).limit_denominator() for k in range(n) if A[j, k]),
                 Polynomial.zero(n)) for j in range(n)]
    prob = ControlProblem(PolyVectorField(comps), (1.0, 0.0, 0.0))
    rep = gramian(prob, None, 1.0)
    assert np.allclose(rep.G, linear_gramian(A, [1.0, 0, 0], 1.0), atol=1e-9)


@pytest.mark.parametrize("t", [0.3, 1.0])
def test_gramian_trivial_cases(t):
    free = ControlProblem(PolyVectorField.zero(3), (1.0, 1.0, 1.0))
    assert np.max(np.abs(gramian(free, rand_control(3, 1), t).G - t * np.eye(3))) <= 1e-12
    mute = ControlProblem(systems.kolmogorov().drift, (0.0, 0.0))
    rep = gramian(mute, None, t)
    assert np.all(rep.G == 0) and not rep.invertible


@pytest.mark.parametrize("name", ["lorenz5", "quadratic"])
def test_gramian_symmetric_psd_and_monotone(name):
    if name == "lorenz5":
        prob = ControlProblem.from_result(lil_scalings(systems.lorenz96(5)))
    else:
        prob = ControlProblem(systems.quadratic_example(1, 0).drift, (0.0, 1.0))
    f = rand_control(prob.n, 2)
    eigs = []
    for t in np.linspace(0.1, 1.0, 10):
        rep = gramian(prob, f, t)
        assert np.max(np.abs(rep.G - rep.G.T)) <= 1e-10
        assert rep.min_eig >= -1e-10
        eigs.append(rep.min_eig)
    assert all(b >= a - 1e-12 for a, b in zip(eigs, eigs[1:]))


def test_gramian_rejects_bad_t():
    with pytest.raises(ValueError):
        gramian(KOLMO, None, 0.0)


def test_malliavin_kolmogorov():
    rep = malliavin_mc(KOLMO, 1.0, 1.0, 50, seed=0)
    assert rep.invertible_freq == 1.0
    assert rep.crosscheck_ok and rep.n_crosschecked == 50
    assert 0 < rep.event_freq < 1


def test_malliavin_npnh_singular():
    sysm = systems.npnh()
    rep = malliavin_mc(ControlProblem(sysm.drift, sysm.sigma), 1.0, 1.0, 20, seed=0)
    assert rep.invertible_freq == 0.0 and rep.n_crosschecked == 0


def test_malliavin_elliptic():
    rep = malliavin_mc(ControlProblem(PolyVectorField.zero(2), (1.0, 1.0)), 1.0, 1.0, 20, seed=1)
    assert rep.invertible_freq == 1.0


def test_malliavin_seeded():
    a = malliavin_mc(KOLMO, 2.0, 0.5, 10, seed=4, crosscheck=False)
    b = malliavin_mc(KOLMO, 2.0, 0.5, 10, seed=4, crosscheck=False)
    assert a.min_eig_rel == b.min_eig_rel and a.event_freq == b.event_freq


def test_ik3_rank():
    sysm = systems.iterated_kolmogorov(3)
    rep = hormander_rank(sysm.drift, sysm.sigma, [0, 0, 0])
    assert rep.rank == 3 and rep.spanning


def test_npnh_rank_two_everywhere():
    sysm = systems.npnh()
    rng = np.random.default_rng(0)
    for _ in range(10):
        pt = rng.uniform(-3, 3, size=3)
        assert hormander_rank(sysm.drift, sysm.sigma, pt).rank == 2
        assert hormander_rank(sysm.drift, sysm.sigma, pt, exact=False).rank == 2


def test_elliptic_depth_one():
    rep = hormander_rank(systems.lorenz96(5).drift, (1.0,) * 5, np.ones(5), depth=1)
    assert rep.rank == 5 and rep.n_fields == 5


@pytest.mark.parametrize("name", ["lorenz96_n5", "lorenz96_n6", "rdr", "sabra_J4", "quadratic"])
def test_rank_exact_matches_svd_oracle_and_is_stable(name):
    sysm = {
        "lorenz96_n5": lambda: systems.lorenz96(5),
        "lorenz96_n6": lambda: systems.lorenz96(6),
        "rdr": systems.rdr,
        "sabra_J4": lambda: systems.sabra(4),
        "quadratic": lambda: systems.quadratic_example(1, 0),
    }[name]()
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1, 1, size=sysm.n)
    r0 = hormander_rank(sysm.drift, sysm.sigma, x0, depth=4).rank
    M = np.array([F.evaluate(x0) for F in bracket_list(sysm.drift, sysm.sigma, 4)])
    assert r0 == rank_numeric(M)
    for _ in range(3):
        assert hormander_rank(sysm.drift, sysm.sigma, x0 + 1e-3 * rng.normal(size=sysm.n), depth=4).rank == r0


def test_rank_depth_validation():
    with pytest.raises(ValueError):
        hormander_rank(KOLMO.Q, KOLMO.sigma, [0, 0], depth=0)


@pytest.mark.parametrize("n", [5, 6, 7, 8])
def test_lorenz_limit_component_homogeneous(n):
    res = lil_scalings(systems.lorenz96(n))
    ch = component_homogeneity(res.limit_drift, res.system.sigma)
    assert ch.is_ch is True and ch.method == "monomial"


def test_lorenz4_limit_only_probe_consistent():
    # the last component (x1 - x2) x3 has two terms
    res = lil_scalings(systems.lorenz96(4))
    ch = component_homogeneity(res.limit_drift, res.system.sigma)
    assert ch.method == "probe" and ch.is_ch is None


def test_component_homogeneity_exponents_langevin():
    k = 2
    U = Polynomial.variable(k, 0, 4) + Polynomial.variable(k, 1, 4)
    res = lil_scalings(systems.langevin(k, U))
    ch = component_homogeneity(res.limit_drift, res.system.sigma)
    # positions are integrals of momenta, so they scale like the control
    assert ch.alphas == (1, 1, 1, 1)


def test_component_homogeneity_exponents_lorenz5():
    res = lil_scalings(systems.lorenz96(5))
    ch = component_homogeneity(res.limit_drift, res.system.sigma)
    assert ch.alphas == (1, 1, 2, 3, 4)
    f = rand_control(5, 3)
    sig = res.system.sigma
    base = flow(res.limit_drift, f, np.zeros(5), [0, 1.0], sig).final
    half = flow(res.limit_drift, f.scaled(0.5), np.zeros(5), [0, 1.0], sig).final
    assert np.allclose(half, base * 0.5 ** np.array([float(a) for a in ch.alphas]), rtol=1e-8, atol=1e-12)


def test_component_homogeneity_two_term_not_certified():
    res = dist_scalings(systems.rdr())
    ch = component_homogeneity(res.limit_drift, res.system.sigma)
    assert ch.method == "probe" and ch.is_ch is not True


@pytest.mark.parametrize("v", [(0, 0, 1, 0, 0), (0, 0, -1, 0, 0), (0, 0, 0, 1, 0), (0, 0, 0, 0, -1), (1, -1, 1, 1, 1)])
def test_direction_certificates_lorenz(v):
    prob = ControlProblem.from_result(lil_scalings(systems.lorenz96(5)))
    cert = direction_certificate(prob, v, seed=0)
    assert cert.found
    assert cert.control.in_ball(1.0)
    end = flow(prob.Q, cert.control, np.zeros(5), [0, 1.0], prob.sigma).final
    assert float(end @ np.array(v, dtype=float)) > 0


def test_random_controls_shape_and_range():
    rng = np.random.default_rng(0)
    seg, sl = random_controls(rng, 100, 3, 1.0, active=[1, 0, 1])
    assert seg.shape == (9,) and sl.shape == (100, 8, 3)
    assert np.all(sl[:, :, 1] == 0)
    mags = np.abs(sl[:, :, [0, 2]])
    assert mags.min() >= 1e-2 and mags.max() <= 1e3


@pytest.mark.parametrize(
    "spans, ch, reach, concl",
    [(True, True, True, "ball_in_A1"), (True, None, True, None), (False, True, True, None), (True, True, False, None)],
)
def test_transfer_inference(spans, ch, reach, concl):
    assert transfer_inference(spans, ch, reach)["conclusion"] == concl
