import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from smalltime.scaling import (
    INF,
    ZERO,
    Order,
    Scaling,
    add,
    check_epsilon,
    compare,
    eval_epsilon,
    scalar_mul,
    smin,
)

from oracles import dominance_less

halves = st.integers(min_value=0, max_value=40)
finite = st.builds(Scaling, halves, halves)
scalings = st.one_of(finite, st.just(INF))


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((Fraction(1, 2), Fraction(1, 2)), (Fraction(3, 2), Fraction(1, 2)), Order.LESS),
        ((1, 1), (1, 0), Order.LESS),
        ((1, 0), (1, 0), Order.EQUAL),
        ((2, 0), (Fraction(3, 2), 3), Order.GREATER),
    ],
)
def test_compare_table(a, b, expected):
    assert compare(Scaling.of(*a), Scaling.of(*b)) is expected


def test_inf_is_top():
    assert compare(INF, INF) is Order.EQUAL
    assert compare(Scaling.of(100, 0), INF) is Order.LESS
    assert smin([]) == INF
    assert add(INF, ZERO) == INF


def test_half_integers_only():
    with pytest.raises(ValueError):
        Scaling.of(Fraction(1, 3), 0)


def test_str_and_json():
    s = Scaling.of(Fraction(3, 2), Fraction(1, 2))
    assert str(s) == "(3/2, 1/2)"
    assert str(INF) == "inf"
    assert Scaling.from_json(s.to_json()) == s
    assert Scaling.from_json(INF.to_json()) == INF


@given(finite, finite)
def test_smaller_scaling_means_larger_quantity(a, b):
    # eps^a dominates eps^b as eps -> 0 exactly when a precedes b
    if a != b:
        bigger_a = dominance_less((b.first, b.second), (a.first, a.second))
        assert bigger_a == (compare(a, b) is Order.LESS)


@given(scalings, scalings, scalings)
def test_total_preorder(a, b, c):
    assert compare(a, b) == -compare(b, a)
    if compare(a, b) <= 0 and compare(b, c) <= 0:
        assert compare(a, c) <= 0


@given(finite, finite, finite)
def test_addition_is_monotone(a, b, c):
    if compare(a, b) is Order.LESS:
        assert compare(add(a, c), add(b, c)) is Order.LESS


@given(st.integers(0, 6), finite)
def test_scalar_mul_is_repeated_addition(k, a):
    acc = ZERO
    for _ in range(k):
        acc = add(acc, a)
    assert scalar_mul(k, a) == acc


def test_zero_times_inf():
    assert scalar_mul(0, INF) == ZERO


@pytest.mark.parametrize("eps", [0.0, -1e-3, 1 / math.e, 0.5])
def test_epsilon_domain(eps):
    with pytest.raises(ValueError):
        check_epsilon(eps)


def test_eval_epsilon_value():
    eps = 1e-4
    got = eval_epsilon(Scaling.of(Fraction(3, 2), Fraction(1, 2)), eps)
    assert got == pytest.approx(eps**1.5 * math.sqrt(math.log(math.log(1 / eps))), rel=1e-14)


@given(finite)
def test_eval_multiplicative(a):
    eps = 1e-3
    b = Scaling.of(Fraction(1, 2), 1)
    assert eval_epsilon(add(a, b), eps) == pytest.approx(eval_epsilon(a, eps) * eval_epsilon(b, eps), rel=1e-12)
