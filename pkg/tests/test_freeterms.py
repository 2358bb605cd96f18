import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from ppclone.freeterms import (HOUSE_SIGNATURE, IdentitySystem, random_term, TermSyntaxError, Var, app, check_signature,
                               holds_in_two_element_projections, house_identities, parse_term,
                               projection_satisfiable, reachable, redexes, rewrite_step, stripped_siggers, theta,
                               theta_for, theta_invariance_check)

x1, x2, x3 = Var(1), Var(2), Var(3)


def test_parse_round_trip_and_errors():
    t = parse_term("q(r(x1, s(y,z)))")
    assert t == app("q", app("r", x1, app("s", x2, x3)))
    assert parse_term(str(t)) == t
    with pytest.raises(TermSyntaxError, match="column 6"):
        parse_term("q(x1 x2)")
    with pytest.raises(TermSyntaxError, match="neither"):
        parse_term("foo")
    with pytest.raises(ValueError):
        Var(0)
    with pytest.raises(ValueError, match="arity"):
        check_signature(app("p", x1, x2), HOUSE_SIGNATURE)
    with pytest.raises(TermSyntaxError, match="line 2"):
        IdentitySystem.parse("f(x) ~= f(x)\nf(x) g(x)")


def test_theta_examples():
    assert theta(x3) == 3
    assert theta(parse_term("q(r(x1,x2))")) == 2
    assert theta(parse_term("s(r(x1,x2),x3)")) == 1
    # outermost r reads with r and s swapped
    assert theta_for(parse_term("r(q(s(x1,x2)),x3)")) == 2
    with pytest.raises(ValueError, match="unknown symbol"):
        theta(parse_term("f(x1)"))


def test_rewrite_examples():
    rules = house_identities()
    assert rewrite_step(parse_term("p(r(x1,x2))"), rules) == {parse_term("p(s(x1,x2))")}
    assert rewrite_step(x1, rules) == set()
    out = rewrite_step(parse_term("q(r(q(r(x1,x2)),x3))"), rules)
    assert out == {parse_term("q(s(x3,q(r(x1,x2))))"), parse_term("q(r(q(s(x2,x1)),x3))")}


def test_rewrite_is_reversible():
    rules = house_identities()
    t = parse_term("q(r(p(r(x1,x2)),x3))")
    for u in rewrite_step(t, rules):
        assert t in rewrite_step(u, rules)
    assert len(reachable(t, rules, 3)) > len(reachable(t, rules, 1))


@st.composite
def house_terms(draw):
    return random_term(random.Random(draw(st.integers(0, 10 ** 9))), max_depth=4)


@settings(max_examples=200, deadline=None)
@given(house_terms())
def test_rewrite_position_complete(t):
    rules = house_identities()
    found = list(redexes(t, rules))
    paths = [p for p, _ in found]
    # the house rules never overlap at one position, so each redex is its own result
    assert len(paths) == len(set(paths))
    assert len(rewrite_step(t, rules)) == len(found)


@settings(max_examples=200, deadline=None)
@given(house_terms())
def test_theta_invariant_under_single_steps(t):
    for u in rewrite_step(t, house_identities()):
        if "r" not in (getattr(t, "symbol", None), getattr(u, "symbol", None)):
            assert theta(t) == theta(u)


def test_theta_invariance_over_random_steps():
    checked, violations = theta_invariance_check(seed=3, trials=1000)
    assert checked == 1000 and violations == 0


def test_projection_examples():
    assert projection_satisfiable(IdentitySystem.parse("f(x,y) ≈ f(x,y)")) == {"f": 0}
    assert projection_satisfiable(stripped_siggers()) is None
    assert projection_satisfiable(house_identities()) is None
    assert projection_satisfiable(IdentitySystem.parse("m(x,x,y) ≈ y\nm(y,x,x) ≈ y")) is None
    assert projection_satisfiable(IdentitySystem.parse("f(x,y,y) ≈ x\nf(y,x,y) ≈ y")) == {"f": 0}
    with pytest.raises(ValueError, match="cap"):
        projection_satisfiable(IdentitySystem.parse("f(x,x,x) ≈ x"), arity_cap=2)


_SMALL_SIG = {"f": 2, "g": 3, "h": 1}


@st.composite
def small_systems(draw):
    rng = random.Random(draw(st.integers(0, 10 ** 9)))
    k = rng.randint(1, 3)
    return IdentitySystem(tuple((random_term(rng, _SMALL_SIG, 3, 3), random_term(rng, _SMALL_SIG, 3, 3)) for _ in range(k)))


@settings(max_examples=200, deadline=None)
@given(small_systems())
def test_projection_search_matches_two_element_evaluation(sys):
    coord = projection_satisfiable(sys)
    names = sorted(sys.signature())
    brute = None
    for combo in itertools.product(*[range(_SMALL_SIG[s]) for s in names]):
        c = dict(zip(names, combo))
        if holds_in_two_element_projections(sys, c):
            brute = c
            break
    assert coord == brute
