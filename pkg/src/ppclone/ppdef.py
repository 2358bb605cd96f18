"""Primitive positive formulas, definability by preservation, and
interpretation certificates that can be checked on their own."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .csp import CapExceeded, Problem
from .relstruct import FiniteStructure, clique, power

DEFAULT_DEPTH_CAP = 3
DEFAULT_DEF_CELL_CAP = 200_000


@dataclass(frozen=True)
class Param:
    """A domain element used as a constant inside a formula."""

    value: int


Arg = Union[int, Param]


@dataclass(frozen=True)
class Atom:
    rel: str  # relation symbol or "="
    args: tuple[Arg, ...]


@dataclass(frozen=True)
class PPFormula:
    """Free variables ``0..free-1``, existential variables ``free..free+exists-1``."""

    free: int
    exists: int
    atoms: tuple[Atom, ...]

    def __post_init__(self):
        nv = self.free + self.exists
        for atom in self.atoms:
            for a in atom.args:
                if isinstance(a, int) and not 0 <= a < nv:
                    raise ValueError(f"variable {a} out of range in {atom}")
            if atom.rel == "=" and len(atom.args) != 2:
                raise ValueError("equality atoms take two arguments")

    @property
    def params(self) -> tuple[int, ...]:
        return tuple(sorted({a.value for at in self.atoms for a in at.args if isinstance(a, Param)}))

    def __str__(self):
        def show(a):
            return f"#{a.value}" if isinstance(a, Param) else f"v{a}"
        body = " & ".join(f"{at.rel}({','.join(map(show, at.args))})" if at.rel != "="
                          else f"{show(at.args[0])}={show(at.args[1])}" for at in self.atoms) or "true"
        if self.exists:
            ex = ",".join(f"v{i}" for i in range(self.free, self.free + self.exists))
            return f"exists {ex}: {body}"
        return body

    def to_json(self) -> dict:
        def arg(a):
            return {"param": a.value} if isinstance(a, Param) else a
        return {"free": self.free, "exists": self.exists,
                "atoms": [{"rel": at.rel, "args": [arg(a) for a in at.args]} for at in self.atoms]}

    @classmethod
    def from_json(cls, data) -> "PPFormula":
        atoms = []
        for at in data["atoms"]:
            args = tuple(Param(a["param"]) if isinstance(a, dict) else int(a) for a in at["args"])
            if at["rel"] == "param":
                # {"rel": "param", "args": [v, {"param": e}]} is v = e
                atoms.append(Atom("=", args))
            else:
                atoms.append(Atom(at["rel"], args))
        return cls(data["free"], data["exists"], tuple(atoms))


def atom(rel: str, *args: Arg) -> Atom:
    return Atom(rel, tuple(args))


def conj(free: int, exists: int, *atoms: Atom) -> PPFormula:
    return PPFormula(free, exists, tuple(atoms))


class FormulaBuilder:
    """Assemble a formula from sub-formulas, renaming their variables.

    ``add(phi, args)`` plugs the arguments (variables of the formula being
    built, or parameters) into phi's free variables and gives phi's
    existential variables fresh names.
    """

    def __init__(self, free: int):
        self.free = free
        self.nvars = free
        self.atoms: list[Atom] = []

    def fresh(self, count: int = 1) -> list[int]:
        out = list(range(self.nvars, self.nvars + count))
        self.nvars += count
        return out

    def atom(self, rel: str, *args: Arg) -> None:
        self.atoms.append(Atom(rel, tuple(args)))

    def add(self, phi: PPFormula, args: Sequence[Arg]) -> None:
        if len(args) != phi.free:
            raise ValueError(f"formula takes {phi.free} arguments, got {len(args)}")
        ex = self.fresh(phi.exists)
        sub = list(args) + ex

        def rn(a):
            return a if isinstance(a, Param) else sub[a]
        for at in phi.atoms:
            self.atoms.append(Atom(at.rel, tuple(rn(a) for a in at.args)))

    def build(self) -> PPFormula:
        return PPFormula(self.free, self.nvars - self.free, tuple(self.atoms))


# -- evaluation ------------------------------------------------------------------

def _check_symbols(a: FiniteStructure, phi: PPFormula) -> None:
    names = dict(a.signature.symbols)
    for at in phi.atoms:
        if at.rel == "=":
            continue
        if at.rel not in names:
            raise KeyError(f"unknown relation symbol {at.rel!r}")
        if names[at.rel] != len(at.args):
            raise ValueError(f"{at.rel} has arity {names[at.rel]}, used with {len(at.args)} arguments")
        for x in at.args:
            if isinstance(x, Param) and not 0 <= x.value < a.domain_size:
                raise ValueError(f"parameter {x.value} outside the domain")


@lru_cache(maxsize=4096)
def eval_pp(a: FiniteStructure, phi: PPFormula, node_limit: Optional[int] = None) -> frozenset:
    """Set of free-variable tuples satisfying ``phi`` in ``a``."""
    _check_symbols(a, phi)
    n = a.domain_size
    nv = phi.free + phi.exists
    # union-find over variables for equality atoms; parameters pin variables
    parent = list(range(nv))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    pins: dict[int, set] = {}
    for at in phi.atoms:
        if at.rel != "=":
            continue
        x, y = at.args
        if isinstance(x, Param) and isinstance(y, Param):
            if x.value != y.value:
                return frozenset()
        elif isinstance(x, Param) or isinstance(y, Param):
            v, c = (y, x) if isinstance(x, Param) else (x, y)
            pins.setdefault(v, set()).add(c.value)
        else:
            rx, ry = find(x), find(y)
            if rx != ry:
                parent[max(rx, ry)] = min(rx, ry)
    reps = sorted({find(v) for v in range(nv)}, key=lambda r: (r >= phi.free, r))
    # free representatives first, in order of their least free variable
    free_reps = []
    for v in range(phi.free):
        r = find(v)
        if r not in free_reps:
            free_reps.append(r)
    others = [r for r in reps if r not in free_reps]
    params = sorted({x.value for at in phi.atoms for x in at.args if isinstance(x, Param)})
    var_of = {r: i for i, r in enumerate(free_reps + others)}
    pvar = {c: len(var_of) + i for i, c in enumerate(params)}
    p = Problem(len(var_of) + len(pvar), n, node_limit)
    for c, i in pvar.items():
        p.fix(i, c)
    for v, cs in pins.items():
        for c in cs:
            p.fix(var_of[find(v)], c)

    def term(x):
        return pvar[x.value] if isinstance(x, Param) else var_of[find(x)]
    by_rel: dict[str, list] = {}
    for at in phi.atoms:
        if at.rel != "=":
            by_rel.setdefault(at.rel, []).append([term(x) for x in at.args])
    for name, scopes in by_rel.items():
        tuples = a.rel(name)
        if not tuples:
            return frozenset()
        p.add(p.relation(tuples), np.array(scopes, dtype=np.int64))
    k = len(free_reps)
    slot = [free_reps.index(find(v)) for v in range(phi.free)]
    out = set()
    for head in p.projections(k):
        out.add(tuple(head[s] for s in slot))
    return frozenset(out)


# -- definability ------------------------------------------------------------------

def _preserved(a: FiniteStructure, rel: Sequence[tuple[int, ...]], with_params: bool,
               cell_cap: int, node_limit: Optional[int]) -> bool:
    from .clones import polymorphism_problem

    n = a.domain_size
    m = len(rel)
    r = len(rel[0])
    consts = range(n) if with_params else ()
    p, var_of_cell = polymorphism_problem(a, m, (), consts, node_limit=node_limit, cell_cap=cell_cap)
    columns = [sum(rel[i][j] * n ** (m - 1 - i) for i in range(m)) for j in range(r)]
    relset = set(rel)
    base = p.dom[:]
    failed = p._failed
    for t in itertools.product(range(n), repeat=r):
        if t in relset:
            continue
        p.dom = base[:]
        p._failed = failed
        ok = True
        for col, v in zip(columns, t):
            var = int(var_of_cell[col])
            if not (p.dom[var] >> v) & 1:
                ok = False
                break
            p.dom[var] = 1 << v
        if ok and p.first() is not None:
            return False
    return True


def _constant_polymorphism(a: FiniteStructure, with_params: bool) -> bool:
    if with_params and a.domain_size > 1:
        return False
    return any(all((c,) * arity in a.rel(name) for name, arity, _ in a.items()) for c in range(a.domain_size))


def pp_definable(a: FiniteStructure, rel: Iterable[Sequence[int]], with_params: bool = False,
                 arity: Optional[int] = None, depth_cap: int = DEFAULT_DEPTH_CAP,
                 cell_cap: int = DEFAULT_DEF_CELL_CAP, node_limit: Optional[int] = 1_000_000,
                 synth_budget: int = 20_000) -> tuple[bool, Optional[PPFormula]]:
    """Decide pp-definability by preservation under polymorphisms of arity |rel|.

    A defining formula is attached when the bounded synthesis finds one.
    """
    rel = sorted({tuple(int(v) for v in t) for t in rel})
    if not rel:
        if arity is None:
            raise ValueError("arity needed for an empty relation")
        return (not _constant_polymorphism(a, with_params)), None
    if a.domain_size ** len(rel) > cell_cap:
        raise CapExceeded(f"{a.domain_size}^{len(rel)} cells for preservation test exceed cap {cell_cap}")
    ok = _preserved(a, rel, with_params, cell_cap, node_limit)
    if not ok:
        return False, None
    params = range(a.domain_size) if with_params else ()
    phi = synthesize(a, rel, params=params, max_exists=depth_cap, budget=synth_budget)
    return True, phi


def synthesize(a: FiniteStructure, rel: Iterable[Sequence[int]], params: Iterable[int] = (),
               max_exists: int = DEFAULT_DEPTH_CAP, budget: int = 20_000,
               table_cap: int = 2_000_000) -> Optional[PPFormula]:
    """Bounded search for a formula defining ``rel``; every answer is re-checked by ``eval_pp``.

    Atoms are added one at a time; since adding atoms only shrinks the
    defined relation, a branch is dropped as soon as it loses a tuple of
    ``rel``.
    """
    rel = {tuple(t) for t in rel}
    if not rel:
        return None
    f = len(next(iter(rel)))
    n = a.domain_size
    params = tuple(params)
    target_codes = np.array(sorted(sum(v * n ** (f - 1 - i) for i, v in enumerate(t)) for t in rel))
    spent = 0
    for e in range(max_exists + 1):
        nv = f + e
        if n ** nv > table_cap:
            break
        grid = np.array(list(itertools.product(range(n), repeat=nv)), dtype=np.int64).reshape(-1, nv)
        key = grid[:, :f] @ (n ** np.arange(f - 1, -1, -1, dtype=np.int64))
        slots = list(range(nv)) + [Param(c) for c in params]

        def col(s):
            return np.full(len(grid), s.value) if isinstance(s, Param) else grid[:, s]
        atoms = []
        masks = []
        for name, arity, tuples in a.items():
            codes = np.array(sorted(sum(v * n ** (arity - 1 - i) for i, v in enumerate(t)) for t in tuples))
            for args in itertools.product(slots, repeat=arity):
                if all(isinstance(s, Param) for s in args):
                    continue
                c = sum(col(s) * n ** (arity - 1 - i) for i, s in enumerate(args))
                m = np.isin(c, codes)
                if m.all():
                    continue
                atoms.append(Atom(name, tuple(args)))
                masks.append(m)
        for x, y in itertools.combinations(range(nv), 2):
            atoms.append(Atom("=", (x, y)))
            masks.append(grid[:, x] == grid[:, y])
        for x in range(nv):
            for c in params:
                atoms.append(Atom("=", (x, Param(c))))
                masks.append(grid[:, x] == c)
        full_target = np.zeros(n ** f, dtype=bool)
        full_target[target_codes] = True

        def defined(mask):
            out = np.zeros(n ** f, dtype=bool)
            out[key[mask]] = True
            return out

        found: list = [None]

        def dfs(start, mask, chosen):
            nonlocal spent
            spent += 1
            if spent > budget or found[0] is not None:
                return
            d = defined(mask)
            if not d[target_codes].all():
                return
            if np.array_equal(d, full_target):
                found[0] = list(chosen)
                return
            for j in range(start, len(atoms)):
                chosen.append(atoms[j])
                dfs(j + 1, mask & masks[j], chosen)
                chosen.pop()
                if spent > budget or found[0] is not None:
                    return

        dfs(0, np.ones(len(grid), dtype=bool), [])
        if found[0] is not None:
            phi = PPFormula(f, e, tuple(found[0]))
            if eval_pp(a, phi) == frozenset(rel):
                return phi
        if spent > budget:
            break
    return None


# -- interpretations --------------------------------------------------------------------

@dataclass(frozen=True)
class InterpretationCertificate:
    dimension: int
    parameters: tuple[int, ...]
    domain_formula: PPFormula
    equality_formula: PPFormula
    relation_formulas: tuple[tuple[str, PPFormula], ...]
    surjection_witness: tuple[tuple[tuple[int, ...], int], ...] = field(repr=False)

    SCHEMA = 1

    def relation_formula(self, name: str) -> PPFormula:
        return dict(self.relation_formulas)[name]

    @property
    def witness_map(self) -> dict:
        return dict(self.surjection_witness)

    def to_json(self) -> dict:
        return {
            "schema": self.SCHEMA,
            "dimension": self.dimension,
            "parameters": list(self.parameters),
            "domain_formula": self.domain_formula.to_json(),
            "equality_formula": self.equality_formula.to_json(),
            "relation_formulas": {k: v.to_json() for k, v in self.relation_formulas},
            "surjection_witness": [[list(t), b] for t, b in self.surjection_witness],
        }

    @classmethod
    def from_json(cls, data) -> "InterpretationCertificate":
        if data.get("schema") != cls.SCHEMA:
            raise ValueError(f"certificate schema {data.get('schema')!r} is not {cls.SCHEMA}")
        return cls(
            data["dimension"], tuple(data["parameters"]),
            PPFormula.from_json(data["domain_formula"]), PPFormula.from_json(data["equality_formula"]),
            tuple(sorted((k, PPFormula.from_json(v)) for k, v in data["relation_formulas"].items())),
            tuple((tuple(t), b) for t, b in data["surjection_witness"]),
        )


def make_certificate(dimension, domain, equality, relations: Mapping[str, PPFormula],
                     witness: Mapping[tuple, int]) -> InterpretationCertificate:
    params = set()
    for phi in [domain, equality, *relations.values()]:
        params.update(phi.params)
    return InterpretationCertificate(dimension, tuple(sorted(params)), domain, equality,
                                     tuple(sorted(relations.items())),
                                     tuple(sorted((tuple(k), v) for k, v in witness.items())))


def verify_interpretation(a: FiniteStructure, target: FiniteStructure,
                          cert: InterpretationCertificate) -> tuple[bool, str]:
    """Exact check that ``cert`` interprets ``target`` in ``a``; returns (ok, diagnostic)."""
    d = cert.dimension
    try:
        for phi in [cert.domain_formula, cert.equality_formula] + [p for _, p in cert.relation_formulas]:
            if set(phi.params) - set(cert.parameters):
                return False, "formula uses a parameter missing from the parameter list"
        if cert.domain_formula.free != d or cert.equality_formula.free != 2 * d:
            return False, "formula free-variable counts do not match the dimension"
        dom = eval_pp(a, cert.domain_formula)
        eq = eval_pp(a, cert.equality_formula)
    except (KeyError, ValueError) as exc:
        return False, f"formula does not evaluate: {exc}"
    if not dom:
        return False, "domain formula defines the empty set"
    eqd = {(x[:d], x[d:]) for x in eq if x[:d] in dom and x[d:] in dom}
    for x in dom:
        if (x, x) not in eqd:
            return False, f"equality is not reflexive at {x}"
    for x, y in eqd:
        if (y, x) not in eqd:
            return False, f"equality is not symmetric at {x}, {y}"
    classes: dict = {}
    for x, y in eqd:
        classes.setdefault(x, set()).add(y)
    for x, ys in classes.items():
        for y in ys:
            if classes[y] != ys:
                return False, f"equality is not transitive at {x}, {y}"
    wit = cert.witness_map
    if set(wit) != dom:
        extra = sorted(set(wit) - dom)[:3]
        missing = sorted(dom - set(wit))[:3]
        return False, f"witness domain differs from the defined set (extra {extra}, missing {missing})"
    for x, ys in classes.items():
        if any(wit[y] != wit[x] for y in ys):
            return False, f"witness is not constant on the class of {x}"
    reps = {}
    for x in sorted(dom):
        b = wit[x]
        if not 0 <= b < target.domain_size:
            return False, f"witness value {b} outside the target domain"
        if b in reps and reps[b] not in classes[x]:
            return False, f"two classes map to target element {b}"
        reps.setdefault(b, x)
    if len(reps) != target.domain_size:
        return False, "witness is not onto the target domain"
    names = dict(cert.relation_formulas)
    for name, arity, tuples in target.items():
        phi = names.get(name)
        if phi is None:
            return False, f"no formula for target relation {name!r}"
        if phi.free != arity * d:
            return False, f"formula for {name!r} has {phi.free} free variables, expected {arity * d}"
        try:
            got = eval_pp(a, phi)
        except (KeyError, ValueError) as exc:
            return False, f"formula for {name!r} does not evaluate: {exc}"
        img = set()
        hits = 0
        for t in got:
            parts = [t[i * d:(i + 1) * d] for i in range(arity)]
            if all(p in dom for p in parts):
                img.add(tuple(wit[p] for p in parts))
                hits += 1
        want = set(tuples)
        if img != want:
            diff = sorted(img ^ want)[:3]
            return False, f"relation {name!r} is not interpreted exactly (symmetric difference starts {diff})"
        # the defined set must be the full preimage, i.e. closed under the equality
        full = 0
        for w in want:
            size = 1
            for b in w:
                size *= len(classes[reps[b]])
            full += size
        if hits != full:
            return False, f"relation {name!r} is not invariant under the equality"
    return True, "ok"


def identity_certificate(a: FiniteStructure) -> InterpretationCertificate:
    rels = {name: PPFormula(arity, 0, (Atom(name, tuple(range(arity))),)) for name, arity, _ in a.items()}
    return make_certificate(1, PPFormula(1, 0, ()), PPFormula(2, 0, (Atom("=", (0, 1)),)), rels,
                            {(x,): x for x in range(a.domain_size)})


def compose_certificates(c1: InterpretationCertificate,
                         c2: InterpretationCertificate) -> InterpretationCertificate:
    """If ``c1`` interprets ``b`` in A and ``c2`` interprets C in ``b``, interpret C in A."""
    d1, d2 = c1.dimension, c2.dimension
    wit1 = c1.witness_map
    rep = {}
    for t in sorted(wit1):
        rep.setdefault(wit1[t], t)
    rel1 = dict(c1.relation_formulas)

    def translate(psi: PPFormula) -> PPFormula:
        fb = FormulaBuilder(psi.free * d1)
        blocks = [list(range(i * d1, (i + 1) * d1)) for i in range(psi.free)]
        for _ in range(psi.exists):
            blocks.append(fb.fresh(d1))
        for blk in blocks:
            fb.add(c1.domain_formula, blk)

        def block(x):
            if isinstance(x, Param):
                return [Param(v) for v in rep[x.value]]
            return blocks[x]
        for at in psi.atoms:
            if at.rel == "=":
                fb.add(c1.equality_formula, block(at.args[0]) + block(at.args[1]))
            else:
                fb.add(rel1[at.rel], [v for x in at.args for v in block(x)])
        return fb.build()

    # every A-tuple whose blocks land in the right classes is in the domain
    dom1 = sorted(wit1)
    full = {}
    classes_of: dict[int, list] = {}
    for t in dom1:
        classes_of.setdefault(wit1[t], []).append(t)
    for t, c in c2.surjection_witness:
        for combo in itertools.product(*[classes_of[v] for v in t]):
            full[tuple(v for p in combo for v in p)] = c
    return make_certificate(
        d1 * d2, translate(c2.domain_formula), translate(c2.equality_formula),
        {name: translate(phi) for name, phi in c2.relation_formulas}, full)


# -- K3 inside powers of K3 ----------------------------------------------------------------

# x != y or ... : for K3 this gadget defines {(a,b,z,w) : not (a = b and z = w)}
_NOT_BOTH_EQUAL = PPFormula(4, 5, tuple(Atom("R", e) for e in [
    (0, 4), (0, 5), (1, 6), (2, 4), (2, 7), (3, 8), (4, 5), (4, 7), (5, 6), (6, 8), (7, 8)]))


def _coordinate_agreement(c: Arg, d: Arg) -> PPFormula:
    """E(x, y): x = y where the parameters agree, anything where they differ (per coordinate)."""
    fb = FormulaBuilder(2)
    z, w = fb.fresh(2)
    fb.add(_NOT_BOTH_EQUAL, [c, d, z, w])
    for v in (0, 1):
        fb.atom("R", v, z)
        fb.atom("R", v, w)
    return fb.build()


def interpret_k3_in_Tk(k: int) -> InterpretationCertificate:
    """Verified certificate interpreting K3 in the k-th power of K3 via the first coordinate."""
    k3 = clique(3)
    if k == 1:
        cert = identity_certificate(k3)
    else:
        c = Param(0)
        d = Param(sum(3 ** i for i in range(k - 1)))  # (0, 1, .., 1)
        eq = _coordinate_agreement(c, d)
        fb = FormulaBuilder(2)
        (x2,) = fb.fresh()
        fb.add(eq, [0, x2])
        fb.atom("R", x2, 1)
        edge = fb.build()
        step = 3 ** (k - 1)
        cert = make_certificate(1, PPFormula(1, 0, ()), eq, {"R": edge},
                                {(x,): x // step for x in range(3 ** k)})
    ok, diag = verify_interpretation(power(k3, k), k3, cert)
    if not ok:
        raise RuntimeError(f"no verified certificate for k={k}: {diag}")
    return cert
