import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from _oracles import brute_eval, random_structure
from ppclone.csp import CapExceeded
from ppclone.ppdef import (Atom, FormulaBuilder, InterpretationCertificate, Param, PPFormula, compose_certificates,
                           eval_pp, identity_certificate, interpret_k3_in_Tk, make_certificate, pp_definable,
                           synthesize, verify_interpretation)
from ppclone.relstruct import (FiniteStructure, boolean_clause_structure, clique, directed_cycle,
                               one_in_three_structure, power, twin_triangles_structure)

K3 = clique(3)
EQ = PPFormula(2, 0, (Atom("=", (0, 1)),))


def clause_gadget() -> PPFormula:
    """x or y or z from the 1-in-3 relation: constant 0, two negations, then the standard chain."""
    x, y, z, a, b, c, d, nx, nz, t, u = range(11)
    return PPFormula(3, 8, (Atom("R", (t, t, u)), Atom("R", (x, nx, t)), Atom("R", (z, nz, t)),
                            Atom("R", (nx, a, b)), Atom("R", (b, y, c)), Atom("R", (c, d, nz))))


@st.composite
def formulas_over(draw, a):
    free = draw(st.integers(1, 3))
    ex = draw(st.integers(0, 2))
    nv = free + ex
    names = [nm for nm, _ in a.signature.symbols]
    atoms = []
    for _ in range(draw(st.integers(0, 4))):
        kind = draw(st.sampled_from(["rel", "rel", "eq", "param"]))
        if kind == "eq":
            atoms.append(Atom("=", (draw(st.integers(0, nv - 1)), draw(st.integers(0, nv - 1)))))
        elif kind == "param":
            atoms.append(Atom("=", (draw(st.integers(0, nv - 1)), Param(draw(st.integers(0, a.domain_size - 1))))))
        else:
            nm = draw(st.sampled_from(names))
            args = []
            for _ in range(a.signature.arity(nm)):
                if draw(st.integers(0, 5)) == 0:
                    args.append(Param(draw(st.integers(0, a.domain_size - 1))))
                else:
                    args.append(draw(st.integers(0, nv - 1)))
            atoms.append(Atom(nm, tuple(args)))
    return PPFormula(free, ex, tuple(atoms))


@st.composite
def structure_and_formula(draw):
    a = random_structure(random.Random(draw(st.integers(0, 10 ** 6))))
    return a, draw(formulas_over(a))


# -- evaluation ----------------------------------------------------------------------------------

def test_eval_examples():
    two_step = PPFormula(2, 1, (Atom("R", (0, 2)), Atom("R", (2, 1))))
    assert eval_pp(K3, two_step) == frozenset(itertools.product(range(3), repeat=2))
    assert eval_pp(K3, EQ) == {(x, x) for x in range(3)}
    assert eval_pp(one_in_three_structure(), clause_gadget()) == boolean_clause_structure().rel("R000")


def test_eval_errors():
    with pytest.raises(KeyError):
        eval_pp(K3, PPFormula(1, 0, (Atom("S", (0, 0)),)))
    with pytest.raises(ValueError):
        eval_pp(K3, PPFormula(1, 0, (Atom("R", (0,)),)))
    with pytest.raises(ValueError):
        eval_pp(K3, PPFormula(1, 0, (Atom("R", (0, Param(7))),)))
    with pytest.raises(ValueError):
        PPFormula(1, 0, (Atom("R", (0, 3)),))


@settings(max_examples=200, deadline=None)
@given(structure_and_formula())
def test_eval_matches_brute_force(data):
    a, phi = data
    assert eval_pp(a, phi) == brute_eval(a, phi)


@settings(max_examples=60, deadline=None)
@given(structure_and_formula())
def test_formula_json_round_trip(data):
    _, phi = data
    assert PPFormula.from_json(json.loads(json.dumps(phi.to_json()))) == phi


def test_param_atom_json():
    phi = PPFormula.from_json({"free": 1, "exists": 0, "atoms": [{"rel": "param", "args": [0, {"param": 2}]}]})
    assert eval_pp(K3, phi) == {(2,)}


def test_builder_renames_existentials():
    fb = FormulaBuilder(2)
    mid = fb.fresh()[0]
    step = PPFormula(2, 0, (Atom("R", (0, 1)),))
    fb.add(step, [0, mid])
    fb.add(step, [mid, 1])
    fb.add(PPFormula(1, 1, (Atom("R", (0, 1)),)), [Param(0)])
    phi = fb.build()
    assert phi.exists == 2 and eval_pp(directed_cycle(3), phi) == {(x, (x + 2) % 3) for x in range(3)}


# -- definability -----------------------------------------------------------------------------------

def test_definability_examples():
    ok, phi = pp_definable(K3, [(x, x) for x in range(3)])
    assert ok and eval_pp(K3, phi) == {(x, x) for x in range(3)}
    assert pp_definable(K3, [(0, 1)]) == (False, None)
    ok, phi = pp_definable(K3, [(0, 1)], with_params=True)
    assert ok
    twin = twin_triangles_structure()
    for c in range(6):
        rel = [(x,) for x in range(6) if (x, c) in twin.rel("S")]
        ok, phi = pp_definable(twin, rel, with_params=True)
        assert ok
        if phi is not None:
            assert eval_pp(twin, phi) == set(rel)


def test_definability_of_unary_subsets_of_k3():
    assert pp_definable(K3, [(0,), (1,)])[0] is False
    ok, phi = pp_definable(K3, [(0,), (1,)], with_params=True)
    assert ok and eval_pp(K3, phi) == {(0,), (1,)}


def test_definability_cap():
    with pytest.raises(CapExceeded):
        pp_definable(clique(4), [(x, y) for x in range(4) for y in range(4) if x != y], cell_cap=1000)


@settings(max_examples=40, deadline=None)
@given(structure_and_formula())
def test_evaluated_relations_are_definable(data):
    a, phi = data
    rel = eval_pp(a, phi)
    if not rel or len(rel) > 6:
        return
    ok, found = pp_definable(a, sorted(rel), with_params=bool(phi.params), arity=phi.free)
    assert ok
    if found is not None:
        assert eval_pp(a, found) == rel


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_definability_is_monotone_in_relations(seed):
    rng = random.Random(seed)
    a = random_structure(rng, n_max=3, max_rels=2, max_arity=2)
    n = a.domain_size
    rel = sorted({tuple(rng.randrange(n) for _ in range(2)) for _ in range(rng.randint(1, 3))})
    extra = [t for t in itertools.product(range(n), repeat=2) if rng.random() < 0.5]
    bigger = a.with_relations({"X": extra}, {"X": 2})
    if pp_definable(a, rel, arity=2)[0]:
        assert pp_definable(bigger, rel, arity=2)[0]


def test_synthesize():
    phi = synthesize(K3, [(x, y) for x in range(3) for y in range(3) if x != y])
    assert phi is not None and eval_pp(K3, phi) == K3.rel("R")
    assert synthesize(K3, [(0, 1)]) is None


# -- certificates -----------------------------------------------------------------------------------

def twin_certificate(c: int) -> InterpretationCertificate:
    other = [x for x in range(6) if x // 3 != c // 3]
    return make_certificate(1, PPFormula(1, 0, (Atom("S", (0, Param(c))),)), EQ,
                            {"R": PPFormula(2, 0, (Atom("R", (0, 1)),))},
                            {(x,): i for i, x in enumerate(other)})


def test_identity_certificate():
    for a in (K3, twin_triangles_structure(), one_in_three_structure()):
        assert verify_interpretation(a, a, identity_certificate(a)) == (True, "ok")


def test_twin_certificate():
    twin = twin_triangles_structure()
    for c in range(6):
        cert = twin_certificate(c)
        assert cert.parameters == (c,)
        assert verify_interpretation(twin, K3, cert) == (True, "ok")


def test_corrupted_certificates_are_rejected():
    twin = twin_triangles_structure()
    cert = twin_certificate(0)
    # a false conjunct removes an edge
    narrowed = PPFormula(2, 0, (Atom("R", (0, 1)), Atom("=", (0, Param(3))), ))
    bad = make_certificate(1, cert.domain_formula, EQ, {"R": narrowed}, cert.witness_map)
    ok, diag = verify_interpretation(twin, K3, bad)
    assert not ok and "not interpreted exactly" in diag
    wit = dict(cert.witness_map)
    wit[(3,)] = wit[(4,)]
    ok, diag = verify_interpretation(twin, K3, make_certificate(1, cert.domain_formula, EQ, {"R": narrowed}, wit))
    assert not ok and "two classes" in diag
    ok, diag = verify_interpretation(twin, K3, make_certificate(1, cert.domain_formula, EQ, {}, cert.witness_map))
    assert not ok and "no formula" in diag
    loose = make_certificate(1, cert.domain_formula, PPFormula(2, 0, ()), {"R": cert.relation_formula("R")},
                             cert.witness_map)
    ok, diag = verify_interpretation(twin, K3, loose)
    assert not ok and "not constant" in diag


def _k3_with_twin(edges_of_twin):
    # vertex 3 is declared equal to 0 through the relation E
    k3_edges = [(x, y) for x in range(3) for y in range(3) if x != y]
    twin = [(3, v) for v in edges_of_twin] + [(v, 3) for v in edges_of_twin]
    e = [(0, 0), (0, 3), (3, 0), (3, 3), (1, 1), (2, 2)]
    return FiniteStructure.build(4, {"R": k3_edges + twin, "E": e})


def test_equality_invariance_is_checked():
    cert = make_certificate(1, PPFormula(1, 0, ()), PPFormula(2, 0, (Atom("E", (0, 1)),)),
                            {"R": PPFormula(2, 0, (Atom("R", (0, 1)),))}, {(0,): 0, (1,): 1, (2,): 2, (3,): 0})
    assert verify_interpretation(_k3_with_twin([1, 2]), K3, cert) == (True, "ok")
    # same image, but the edge set is no longer a union of classes
    ok, diag = verify_interpretation(_k3_with_twin([1]), K3, cert)
    assert not ok and "not invariant" in diag


def test_certificate_json_round_trip_and_schema():
    cert = twin_certificate(2)
    data = json.loads(json.dumps(cert.to_json()))
    assert InterpretationCertificate.from_json(data) == cert
    data["schema"] = 99
    with pytest.raises(ValueError, match="schema"):
        InterpretationCertificate.from_json(data)


def test_composition():
    twin = twin_triangles_structure()
    first = twin_certificate(0)
    second = identity_certificate(K3)
    composed = compose_certificates(first, second)
    assert verify_interpretation(twin, K3, composed)[0]
    t2 = power(K3, 2)
    chain = compose_certificates(identity_certificate(t2), interpret_k3_in_Tk(2))
    assert verify_interpretation(t2, K3, chain)[0]


def test_composition_multiplies_dimension():
    # K3 inside its square by pairs, then K3 inside that by the first coordinate
    t2 = power(K3, 2)
    pair = make_certificate(2, PPFormula(2, 0, ()), PPFormula(4, 0, (Atom("=", (0, 2)), Atom("=", (1, 3)))),
                            {"R": PPFormula(4, 0, (Atom("R", (0, 2)), Atom("R", (1, 3))))},
                            {(x, y): 3 * x + y for x in range(3) for y in range(3)})
    assert verify_interpretation(K3, t2, pair)[0]
    composed = compose_certificates(pair, interpret_k3_in_Tk(2))
    assert composed.dimension == 2
    assert verify_interpretation(K3, K3, composed)[0]


@pytest.mark.parametrize("k", [1, 2, 3])
def test_k3_in_tk(k):
    cert = interpret_k3_in_Tk(k)
    assert verify_interpretation(power(K3, k), K3, cert) == (True, "ok")


def test_structure_mismatch_is_a_diagnostic():
    ok, diag = verify_interpretation(one_in_three_structure(), K3, twin_certificate(0))
    assert not ok and "does not evaluate" in diag
