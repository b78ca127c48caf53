from fractions import Fraction

import numpy as np
import pytest

from smalltime import systems
from smalltime.control import ControlProblem
from smalltime.numerics import flow
from smalltime.polyvec import Polynomial, PolyVectorField
from smalltime.propagation import dist_scalings
from smalltime.saturation import (
    ball_target,
    bracket_limit_check,
    halfspace_target,
    ray_realizability,
    reachability_probe,
    realizability_report,
    saturate,
    saturate_step,
    seed,
)


def unit(n, j):
    return tuple(1 if i == j else 0 for i in range(n))


def test_seed_lorenz_and_ik():
    fam = seed(systems.lorenz96(5).drift, [unit(5, 0), unit(5, 1)])
    assert fam.directions().span == (unit(5, 0), unit(5, 1))
    assert [e["rule"] for e in fam.trace] == ["drift", "control", "control"]
    fam = seed(systems.iterated_kolmogorov(4).drift, [PolyVectorField.constant(unit(4, 0))])
    assert fam.directions().span == (unit(4, 0),)


def test_seed_without_controls_is_drift_only():
    fam = seed(systems.npnh().drift, [])
    assert fam.rays == [] and len(fam.flows) == 1


@pytest.mark.parametrize("bad", [(0, 0), (1, 0, 0)])
def test_seed_rejects_bad_controls(bad):
    with pytest.raises(ValueError):
        seed(systems.kolmogorov().drift, [bad])


@pytest.mark.parametrize("a", [1, 2, -1])
def test_quadratic_even_degree_gives_cone(a):
    fam = saturate_step(seed(systems.quadratic_example(a, 0).drift, [(0, 1)]))
    dirs = fam.directions()
    assert dirs.has_cone((-a, 0)) and not dirs.has_span((1, 0))
    entry = next(e for e in fam.trace if e.get("rule") == "bracket" and e["element"].startswith("cone"))
    assert entry["degree"] == 2


@pytest.mark.parametrize("b", [1, -3])
def test_quadratic_odd_degree_gives_span(b):
    fam = saturate_step(seed(systems.quadratic_example(0, b).drift, [(0, 1)]))
    assert fam.directions().has_span((1, 0))


def test_lorenz_steps():
    n = 5
    V0 = systems.lorenz96(n).drift
    fam1 = saturate_step(seed(V0, [unit(n, 0), unit(n, 1)]))
    # [e1, V0] leading part: -x2 d3 + x4 d5, up to normalization
    texts = [str(g.field) for g in fam1.flows[1:]]
    assert any("x2" in t and "x4" in t for t in texts)
    fam2 = saturate_step(fam1)
    assert fam2.directions().has_span(unit(n, 2))


def test_step_does_not_mutate_and_is_monotone():
    fam = seed(systems.lorenz96(6).drift, [unit(6, 0), unit(6, 1)])
    before = fam.directions()
    nxt = saturate_step(fam)
    assert fam.directions() == before
    assert set(before.span) <= set(nxt.directions().span)


@pytest.mark.parametrize("n", range(2, 9))
def test_ik_exact(n):
    res = saturate(systems.iterated_kolmogorov(n).drift, [unit(n, 0)])
    assert res.exact_controllable
    assert res.det != 0 and len(res.basis) == n
    assert res.steps <= 2 * n
    assert res.trace[-1]["rule"] == "exact-controllability"


@pytest.mark.parametrize("n", range(4, 9))
def test_lorenz_exact(n):
    res = saturate(systems.lorenz96(n).drift, [unit(n, 0), unit(n, 1)])
    assert res.exact_controllable and res.det != 0


def test_quadratic_cone_not_exact():
    res = saturate(systems.quadratic_example(1, 0).drift, [(0, 1)])
    assert not res.exact_controllable
    assert res.directions.has_cone((-1, 0)) and not res.directions.has_span((1, 0))
    assert res.directions.has_span((0, 1))
    assert res.trace[-1]["rule"] == "approximate-reachability"
    out = res.to_json()
    assert out["basis_certificate"] is None


def test_npnh_partial_span():
    res = saturate(systems.npnh().drift, [(1, 0, 0)])
    assert not res.exact_controllable
    assert res.directions.has_span((0, 1, 1)) and res.directions.span_rank() == 2


def test_opposite_cones_merge():
    # x' = (y^2 - z^2) with two noisy directions: +e1 from y, -e1 from z
    n = 3
    comps = [Polynomial.variable(n, 1, 2) - Polynomial.variable(n, 2, 2), Polynomial.zero(n), Polynomial.zero(n)]
    res = saturate(PolyVectorField(comps), [unit(n, 1), unit(n, 2)])
    assert res.directions.has_span((1, 0, 0))
    assert any(e.get("rule") == "opposite-cones" for e in res.trace)


def test_saturate_json_certificate():
    res = saturate(systems.iterated_kolmogorov(3).drift, [unit(3, 0)])
    cert = res.to_json()["basis_certificate"]
    assert Fraction(cert["det"]) == res.det and len(cert["basis"]) == 3


def test_max_steps_validation():
    with pytest.raises(ValueError):
        saturate(systems.kolmogorov().drift, [(1, 0)], max_steps=0)


# probe --------------------------------------------------------------------

def test_probe_zero_control_hits_ball_at_origin():
    prob = ControlProblem(PolyVectorField.zero(2), (1.0, 1.0))
    res = reachability_probe(prob, ball_target([0, 0], 0.1), trials=10, seed=0)
    assert res.found and res.trials == 1 and res.time == 0.0


def test_probe_langevin_momentum_halfspace():
    k = 2
    U = sum((Polynomial.variable(k, i, 4) for i in range(k)), Polynomial.zero(k))
    res = dist_scalings(systems.langevin(k, U))
    prob = ControlProblem.from_result(res)
    p0 = np.array([0, 0, 1.0, 0.5])
    hit = reachability_probe(prob, halfspace_target(p0, 0.2), trials=2000, seed=1)
    assert hit.found
    assert float(np.asarray(hit.state) @ p0) > 0.2


def test_probe_quadratic_forbidden_halfspace():
    prob = ControlProblem(systems.quadratic_example(1, 0).drift, (0.0, 1.0))
    hit = reachability_probe(prob, halfspace_target([1, 0], 0.1), trials=10_000, seed=0)
    assert not hit.found
    allowed = reachability_probe(prob, halfspace_target([-1, 0], 0.1), trials=2000, seed=0)
    assert allowed.found


def _check_hit(prob, hit, target):
    end = flow(prob.Q, hit.control, np.array(prob.x0), np.array([0.0, hit.time]), prob.sigma).final
    assert target(end[None, :])[0]


@pytest.mark.parametrize("name", ["ik_n3", "lorenz96_n4", "lorenz96_n5"])
def test_exact_controllable_reaches_random_balls(name):
    n = int(name[-1])
    sysm = systems.iterated_kolmogorov(n) if name.startswith("ik") else systems.lorenz96(n)
    assert saturate(sysm.drift, [unit(n, j) for j in sysm.noise_indices]).exact_controllable
    prob = ControlProblem(sysm.drift, sysm.sigma)
    rng = np.random.default_rng(7)
    for k in range(10):
        tgt = ball_target(rng.uniform(-0.5, 0.5, size=n), 0.25)
        hit = reachability_probe(prob, tgt, trials=4000, seed=k)
        assert hit.found, tgt.description
        _check_hit(prob, hit, tgt)


def test_probe_seeded():
    prob = ControlProblem(systems.lorenz96(4).drift, systems.lorenz96(4).sigma)
    tgt = ball_target([0.3, -0.2, 0.4, 0.1], 0.25)
    a = reachability_probe(prob, tgt, trials=2000, seed=3)
    b = reachability_probe(prob, tgt, trials=2000, seed=3)
    assert a.to_json() == b.to_json()


# realizability -------------------------------------------------------------

@pytest.mark.parametrize("name", ["ik_n3", "lorenz96_n5", "quadratic"])
def test_ray_realizability_stable(name):
    V0 = {"ik_n3": lambda: systems.iterated_kolmogorov(3).drift, "lorenz96_n5": lambda: systems.lorenz96(5).drift,
          "quadratic": lambda: systems.quadratic_example(1, 0).drift}[name]()
    v = unit(V0.n, V0.n - 1) if name == "quadratic" else unit(V0.n, 0)
    chk = ray_realizability(V0, v, seed=0)
    assert chk["stable"] and chk["ratio"] <= 3
    assert chk["errors"][0] > chk["errors"][1] > chk["errors"][2]


def test_bracket_limit_quadratic():
    V0 = systems.quadratic_example(1, 0).drift
    B = PolyVectorField.constant((-1, 0))
    chk = bracket_limit_check(V0, (0, 1), B, 2)
    assert chk["decreasing"]


def test_realizability_report_lorenz():
    res = saturate(systems.lorenz96(5).drift, [unit(5, 0), unit(5, 1)])
    rows = realizability_report(res, seed=0)
    kinds = {r["check"] for r in rows}
    assert kinds == {"ray", "bracket"}
    assert all(r["ok"] for r in rows), [r for r in rows if not r["ok"]]
