import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smalltime import systems
from smalltime.cli import corpus_path
from smalltime.polyvec import Polynomial, PolyVectorField
from smalltime.propagation import SdeSystem, dist_scalings
from smalltime.regular import (
    GraphDomain,
    SuperLevelDomain,
    check_regular,
    domain_from_json,
    scaled_domain_limit,
    scaled_membership,
    shift_system,
)

H = Fraction(1, 2)


def x(n, i, k=1):
    return Polynomial.variable(n, i, k)


def langevin1():
    return systems.langevin(1, x(1, 0, 4) * Fraction(1, 4))


def energy():
    return x(2, 1, 2) * H + x(2, 0, 4) * Fraction(1, 4)


def ik_graph(n):
    terms = [(1, [Fraction(1, 2 * i + 1) if i == k else 0 for i in range(n)]) for k in range(1, n)]
    return GraphDomain(0, tuple(terms), n)


# shift ------------------------------------------------------------------------

def test_shift_by_zero_is_identity():
    sysm = systems.rdr()
    assert shift_system(sysm, [0, 0, 0, 0]) is sysm


def test_shift_linear_gains_constant():
    A = [[1, 2], [0, -1]]
    comps = [x(2, 0) * A[0][0] + x(2, 1) * A[0][1], x(2, 1) * A[1][1]]
    sysm = SdeSystem(PolyVectorField(comps), (1.0, 0.0))
    sh = shift_system(sysm, [3, Fraction(1, 2)])
    assert sh.drift[0] == comps[0] + 4
    assert sh.drift[1] == comps[1] - H


def test_shift_langevin_terms():
    sh = shift_system(langevin1(), [1, 2])
    q, p = x(2, 0), x(2, 1)
    assert sh.drift[0] == p + 2
    assert sh.drift[1] == -(p + 2) - (q + 1) ** 3


@settings(max_examples=30)
@given(st.tuples(*[st.fractions(-3, 3, max_denominator=4)] * 4), st.tuples(*[st.fractions(-2, 2, max_denominator=3)] * 4))
def test_shift_identity_on_points(xs, y):
    sysm = systems.lorenz96(4, forcing=Fraction(8))
    sh = shift_system(sysm, xs)
    moved = [a + b for a, b in zip(y, xs)]
    assert sh.drift.evaluate_exact(list(y)) == sysm.drift.evaluate_exact(moved)


def test_shift_wrong_length():
    with pytest.raises(ValueError):
        shift_system(systems.kolmogorov(), [1])


# domains ------------------------------------------------------------------

@pytest.mark.parametrize(
    "terms, msg",
    [
        (((1, [1, 0]),), "graph coordinate"),
        (((1, [0, -1]),), "nonnegative"),
        (((1, [0, Fraction(1, 65)]),), "denominators"),
        (((1, [0, 0]),), "constant"),
    ],
)
def test_graph_domain_validation(terms, msg):
    with pytest.raises(ValueError, match=msg):
        GraphDomain(0, terms, 2)


def test_superlevel_requires_boundary_point():
    with pytest.raises(ValueError):
        SuperLevelDomain(x(2, 0) + 1)
    with pytest.raises(ValueError):
        SuperLevelDomain.from_level(energy(), Fraction(1), [1, 1])


@pytest.mark.parametrize("n", [2, 3])
def test_bm_cone_is_all_critical(n):
    dom = GraphDomain(n - 1, tuple((2, [1 if i == k else 0 for i in range(n)]) for k in range(n - 1)), n)
    lim = scaled_domain_limit(dom, dist_scalings(systems.brownian(n)).scalings)
    assert lim.kind == "PersistingBoundary" and lim.nonempty
    assert lim.critical == tuple(range(n - 1))


@pytest.mark.parametrize("n", [3, 4, 5])
def test_ik_graph_is_all_critical(n):
    lim = scaled_domain_limit(ik_graph(n), dist_scalings(systems.iterated_kolmogorov(n)).scalings)
    assert lim.kind == "PersistingBoundary"
    assert len(lim.critical) == n - 1 and not lim.subcritical and not lim.supercritical


@pytest.mark.parametrize(
    "coeff, expo, kind",
    [(1, 2, "HalfSpaceLike"), (1, 1, "PersistingBoundary"), (1, H, "DegenerateEmpty"), (-1, H, "DegeneratePositive")],
)
def test_graph_limit_kinds(coeff, expo, kind):
    dom = GraphDomain(1, ((coeff, [expo, 0]),), 2)
    lim = scaled_domain_limit(dom, dist_scalings(systems.brownian(2)).scalings)
    assert lim.kind == kind
    assert lim.nonempty == (kind != "DegenerateEmpty")
    if lim.nonempty:
        w = np.array([lim.witness])
        assert lim.target(w)[0]


@pytest.mark.parametrize("p0, leading", [(1, "x2"), (-1, "- x2"), (0, "1/2*x2^2")])
def test_langevin_superlevel_leading_part(p0, leading):
    q0 = 1
    level = Fraction(1, 4) + Fraction(p0 * p0, 2)
    dom = SuperLevelDomain.from_level(energy(), level, [q0, p0])
    sh = shift_system(langevin1(), [q0, p0])
    lim = scaled_domain_limit(dom, dist_scalings(sh).scalings)
    assert str(lim.leading) == leading
    assert lim.nonempty


@pytest.mark.parametrize("eps", [1e-2, 1e-3])
@pytest.mark.parametrize("name", ["bm", "ik4"])
def test_all_critical_membership_agrees(name, eps):
    if name == "bm":
        dom = GraphDomain(1, ((2, [1, 0]),), 2, margin=0)
        b = [H, H]
    else:
        dom = GraphDomain(0, ik_graph(4).terms, 4, margin=0)
        b = [H, Fraction(3, 2), Fraction(5, 2), Fraction(7, 2)]
    lim = scaled_domain_limit(dom, b)
    Y = np.random.default_rng(0).uniform(-1, 1, size=(1000, dom.n))
    in_limit = Y[:, dom.index] > sum(dom.terms[k].evaluate(Y) for k in lim.critical)
    assert np.array_equal(scaled_membership(dom, b, eps, Y), in_limit)


# pipeline -----------------------------------------------------------------

def test_bm_cone_regular():
    dom = GraphDomain(1, ((2, [1, 0]),), 2)
    rep = check_regular(systems.brownian(2), [0, 0], dom, seed=0)
    assert str(rep) == "Regular"
    assert rep.evidence["reachability"]["method"] == "saturation"


def test_ik_graph_regular():
    rep = check_regular(systems.iterated_kolmogorov(4), [0] * 4, ik_graph(4), seed=0)
    assert str(rep) == "Regular"


@pytest.mark.parametrize("p0", [1, 0, -1])
def test_langevin_levelset_regular(p0):
    level = Fraction(1, 4) + Fraction(p0 * p0, 2)
    dom = SuperLevelDomain.from_level(energy(), level, [1, p0])
    rep = check_regular(langevin1(), [1, p0], dom, seed=0, trials=2000)
    assert str(rep) == "Regular", rep.evidence.get("reachability")
    assert rep.evidence["containment"]["ok"]


def test_defective_is_inconclusive():
    sysm = systems.lorenz96(5, noisy=(0,))
    dom = GraphDomain(0, ((1, [0, 1, 0, 0, 0]),), 5)
    rep = check_regular(sysm, [0] * 5, dom, seed=0)
    assert str(rep) == "Inconclusive(propagation)"
    assert rep.verdict != "Irregular"


def test_empty_limit_is_inconclusive():
    dom = GraphDomain(1, ((1, [H, 0]),), 2)
    rep = check_regular(systems.brownian(2), [0, 0], dom, seed=0)
    assert str(rep) == "Inconclusive(domain)"


def test_lorenz_graph_regular():
    dom = domain_from_json(json.loads(corpus_path("lorenz96_n5_graph.json").read_text()), 5)[0]
    rep = check_regular(systems.lorenz96(5), [0] * 5, dom, seed=0)
    assert str(rep) == "Regular"


# JSON -----------------------------------------------------------------------

def test_domain_json_forms():
    dom, pt = domain_from_json(json.loads(corpus_path("levelset.json").read_text()), 2)
    assert isinstance(dom, SuperLevelDomain) and pt == [1, 1]
    G = dom.G
    dom2, _ = domain_from_json({"form": "superlevel", "G": G.to_json()}, 2)
    assert dom2.G == G
    dom3, pt3 = domain_from_json(json.loads(corpus_path("ik4_graph.json").read_text()), 4)
    assert isinstance(dom3, GraphDomain) and pt3 == [0] * 4
    assert domain_from_json(dom3.to_json(), 4)[0] == dom3


@pytest.mark.parametrize(
    "obj, msg",
    [
        ({"form": "ball"}, "form"),
        ({"form": "graph", "index": 0}, "terms"),
        ({"form": "graph", "index": 0, "terms": [{"coeff": 1}]}, "exponents"),
        ({"form": "superlevel"}, "superlevel"),
        ({"form": "graph", "index": 0, "terms": [], "point": [0]}, "point"),
        ([], "object"),
    ],
)
def test_domain_json_errors(obj, msg):
    with pytest.raises(ValueError, match=msg):
        domain_from_json(obj, 2)
