"""Graph-group systems: pseudoloops, reductions towards a minimal system,
and a pipeline that ends in a pseudoloop or in a verified interpretation of K3.

Every relation used by a reduction step comes with a primitive positive
formula over the expanded structure (the graph plus one unary predicate
per orbit), and every step carries an interpretation certificate that is
checked before it is used.  Anything the searches cannot settle within
their caps is reported as unknown.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .csp import CapExceeded
from .permgroup import Permutation, PermutationGroup, generate
from .ppdef import (Atom, FormulaBuilder, InterpretationCertificate, Param, PPFormula, compose_certificates,
                    eval_pp, identity_certificate, interpret_k3_in_Tk, make_certificate, synthesize,
                    verify_interpretation)
from .relstruct import FiniteStructure, clique, power

EQ = PPFormula(2, 0, (Atom("=", (0, 1)),))
TRUE1 = PPFormula(1, 0, ())
EDGE = PPFormula(2, 0, (Atom("R", (0, 1)),))
CANONICAL_ATOM_CAP = 40_000
EMBED_NODE_CAP = 200_000


def orbit_name(v: int) -> str:
    return f"orb{v}"


@dataclass(frozen=True, eq=False)
class GGSystem:
    graph: FiniteStructure
    group: PermutationGroup
    directed: bool = False

    def __post_init__(self):
        if self.graph.signature.symbols != (("R", 2),):
            raise ValueError("graph must have exactly one binary relation named R")
        if self.group.degree != self.graph.domain_size:
            raise ValueError(f"group degree {self.group.degree} != domain size {self.graph.domain_size}")
        if not self.group.is_invariant(self.edges):
            raise ValueError("edge relation is not invariant under the group")
        if not self.directed and any((b, a) not in self.edges for a, b in self.edges):
            raise ValueError("edge relation is not symmetric")

    @classmethod
    def make(cls, n: int, edges, generators: Sequence[Sequence[int]] = (), directed: bool = False,
             symmetric: bool = True) -> "GGSystem":
        edges = {tuple(e) for e in edges}
        if symmetric and not directed:
            edges |= {(b, a) for a, b in edges}
        graph = FiniteStructure.build(n, {"R": edges}, {"R": 2})
        return cls(graph, generate([Permutation(g) for g in generators], degree=n), directed)

    @property
    def n(self) -> int:
        return self.graph.domain_size

    @property
    def edges(self) -> frozenset:
        return self.graph.rel("R")

    @cached_property
    def orbits(self) -> list[list[int]]:
        return self.group.point_orbits()

    @cached_property
    def orbit_index(self) -> list[int]:
        out = [0] * self.n
        for i, orb in enumerate(self.orbits):
            for v in orb:
                out[v] = i
        return out

    def orbit_of(self, v: int) -> list[int]:
        return self.orbits[self.orbit_index[v]]

    @cached_property
    def expanded(self) -> FiniteStructure:
        """The graph together with one unary predicate ``orb<least member>`` per orbit."""
        rels = {"R": self.edges}
        ar = {"R": 2}
        for orb in self.orbits:
            rels[orbit_name(orb[0])] = [(v,) for v in orb]
            ar[orbit_name(orb[0])] = 1
        return FiniteStructure.build(self.n, rels, ar)

    def neighbours(self, v: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == v)

    def has_triangle(self) -> bool:
        return find_triangle(self.graph) is not None

    def restrict(self, subset: Sequence[int], edges=None) -> "GGSystem":
        """Subsystem on an invariant subset, vertices renumbered in increasing order."""
        subset = sorted(subset)
        index = {v: i for i, v in enumerate(subset)}
        edges = self.edges if edges is None else edges
        new_edges = [(index[a], index[b]) for a, b in edges if a in index and b in index]
        gens = []
        for g in self.group.generators:
            if any(g(v) not in index for v in subset):
                raise ValueError("subset is not invariant under the group")
            gens.append([index[g(v)] for v in subset])
        return GGSystem.make(len(subset), new_edges, gens, self.directed, symmetric=False)

    def quotient(self, labels: Sequence[int], edges=None) -> "GGSystem":
        """Quotient by the invariant partition with class labels ``0..m-1`` (one per vertex)."""
        m = max(labels) + 1
        edges = self.edges if edges is None else edges
        new_edges = {(labels[a], labels[b]) for a, b in edges}
        rep = {}
        for v, c in enumerate(labels):
            rep.setdefault(c, v)
        gens = []
        for g in self.group.generators:
            img = [labels[g(rep[c])] for c in range(m)]
            for v, c in enumerate(labels):
                if labels[g(v)] != img[c]:
                    raise ValueError("partition is not invariant under the group")
            gens.append(img)
        return GGSystem.make(m, new_edges, gens, self.directed, symmetric=False)

    def with_edges(self, edges) -> "GGSystem":
        return GGSystem.make(self.n, edges, [g.images for g in self.group.generators], self.directed,
                             symmetric=False)

    def to_json(self) -> dict:
        out = {"graph": self.graph.to_json(), "group": self.group.to_json()}
        if self.directed:
            out["directed"] = True
        return out

    @classmethod
    def from_json(cls, data) -> "GGSystem":
        from .relstruct import ParseError

        if not isinstance(data, dict) or "graph" not in data or "group" not in data:
            raise ParseError("gg-system: expected {'graph': ..., 'group': ...}")
        graph = FiniteStructure.from_json(data["graph"])
        group = PermutationGroup.from_json(data["group"])
        try:
            return cls(graph, group, bool(data.get("directed", False)))
        except ValueError as exc:
            raise ParseError(f"gg-system: {exc}") from None


def find_triangle(graph: FiniteStructure) -> Optional[tuple[int, int, int]]:
    r = graph.rel("R")
    n = graph.domain_size
    for a in range(n):
        for b in range(n):
            if (a, b) in r and (b, a) in r:
                for c in range(n):
                    if all(p in r for p in ((a, c), (c, a), (b, c), (c, b))):
                        return a, b, c
    return None


# -- pseudoloops ------------------------------------------------------------------------

@dataclass(frozen=True)
class PseudoloopWitness:
    vertex: int
    alpha: Permutation

    @property
    def target(self) -> int:
        return self.alpha(self.vertex)

    def verify(self, sys: GGSystem) -> bool:
        return (self.vertex, self.target) in sys.edges and self.alpha in sys.group

    def to_json(self) -> dict:
        return {"vertex": self.vertex, "alpha": list(self.alpha.images)}

    @classmethod
    def from_json(cls, data) -> "PseudoloopWitness":
        return cls(data["vertex"], Permutation(data["alpha"]))


def find_pseudoloop(sys: GGSystem) -> Optional[PseudoloopWitness]:
    for a in range(sys.n):
        orb = set(sys.orbit_of(a))
        for b in sys.neighbours(a):
            if b in orb:
                alpha = sys.group.element_mapping((a,), (b,))
                return PseudoloopWitness(a, alpha)
    return None


def has_pseudoloop_edges(sys: GGSystem, edges) -> bool:
    return any(sys.orbit_index[a] == sys.orbit_index[b] for a, b in edges)


# -- step 1 and diamonds ------------------------------------------------------------------

STEP1_FORMULA = PPFormula(2, 1, (Atom("R", (0, 1)), Atom("R", (0, 2)), Atom("R", (1, 2))))
# x and y both form a triangle with the same edge (b, c)
DIAMOND1_FORMULA = PPFormula(2, 2, (Atom("R", (0, 2)), Atom("R", (0, 3)), Atom("R", (2, 3)),
                                    Atom("R", (1, 2)), Atom("R", (1, 3))))


def step1_edges(sys: GGSystem) -> frozenset:
    return eval_pp(sys.expanded, STEP1_FORMULA)


def step1_closure(sys: GGSystem) -> GGSystem:
    """Keep exactly the edges that lie in a triangle."""
    return sys.with_edges(step1_edges(sys))


def diamond_formula(steps: int) -> PPFormula:
    fb = FormulaBuilder(2)
    chain = [0] + fb.fresh(steps - 1) + [1]
    for u, v in zip(chain, chain[1:]):
        fb.add(DIAMOND1_FORMULA, [u, v])
    return fb.build()


def _compose_rel(r1: frozenset, r2: frozenset) -> frozenset:
    by_first: dict = {}
    for b, c in r2:
        by_first.setdefault(b, []).append(c)
    return frozenset((a, c) for a, b in r1 for c in by_first.get(b, ()))


def diamond_equiv(sys: GGSystem) -> tuple[frozenset, int]:
    """Diamond-connectivity as a set of pairs, with the index where the chain stabilises."""
    triangles = {a for a, b in eval_pp(sys.expanded, STEP1_FORMULA)}
    if len(triangles) != sys.n:
        missing = sorted(set(range(sys.n)) - triangles)
        raise ValueError(f"vertices {missing[:5]} lie in no triangle")
    one = eval_pp(sys.expanded, DIAMOND1_FORMULA)
    cur, steps = one, 1
    while True:
        nxt = _compose_rel(cur, one)
        if nxt == cur:
            return cur, steps
        cur, steps = nxt, steps + 1


def labels_of(n: int, equiv) -> list[int]:
    """Class labels numbered by least member."""
    labels = [-1] * n
    nxt = 0
    for v in range(n):
        if labels[v] < 0:
            for w in range(n):
                if (v, w) in equiv:
                    labels[w] = nxt
            nxt += 1
    return labels


# -- certificates for single reduction steps ----------------------------------------------

def step_certificate(old: GGSystem, new: GGSystem, domain: PPFormula, equality: PPFormula,
                     edge: PPFormula, mapping: dict) -> InterpretationCertificate:
    """Certificate interpreting ``new.expanded`` in ``old.expanded``; ``mapping`` sends old vertices to new."""
    rels = {"R": edge}
    for orb in new.orbits:
        src = next(v for v, w in sorted(mapping.items()) if w == orb[0])
        pred = Atom(orbit_name(old.orbit_of(src)[0]), (1,))
        if equality == EQ:
            rels[orbit_name(orb[0])] = PPFormula(1, 0, (Atom(pred.rel, (0,)),))
        else:
            fb = FormulaBuilder(1)
            (y,) = fb.fresh()
            fb.add(equality, [0, y])
            fb.atom(pred.rel, y)
            rels[orbit_name(orb[0])] = fb.build()
    return make_certificate(1, domain, equality, rels, {(v,): w for v, w in mapping.items()})


def quotient_edge_formula(equality: PPFormula) -> PPFormula:
    fb = FormulaBuilder(2)
    x2, y2 = fb.fresh(2)
    fb.add(equality, [0, x2])
    fb.add(equality, [1, y2])
    fb.atom("R", x2, y2)
    return fb.build()


@dataclass
class TraceStep:
    kind: str  # "restrict" | "quotient" | "closure" | "tk"
    orbits_before: int
    orbits_after: int
    size_after: int
    description: str
    certificate: InterpretationCertificate = field(repr=False)
    formulas: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, "orbits_before": self.orbits_before, "orbits_after": self.orbits_after,
                "size_after": self.size_after, "description": self.description,
                "formulas": {k: str(v) for k, v in sorted(self.formulas.items())}}


def _checked(old: GGSystem, new: GGSystem, cert: InterpretationCertificate) -> InterpretationCertificate:
    ok, diag = verify_interpretation(old.expanded, new.expanded, cert)
    if not ok:
        raise AssertionError(f"internal step certificate failed: {diag}")
    return cert


# -- minimisation ------------------------------------------------------------------------

def _unary_templates(sys: GGSystem) -> list[PPFormula]:
    out = [PPFormula(1, 1, (Atom("R", (0, 1)),)),
           PPFormula(1, 2, (Atom("R", (0, 1)), Atom("R", (1, 2)), Atom("R", (0, 2))))]
    for orb in sys.orbits:
        p = orbit_name(orb[0])
        out.append(PPFormula(1, 0, (Atom(p, (0,)),)))
        out.append(PPFormula(1, 1, (Atom("R", (0, 1)), Atom(p, (1,)))))
        out.append(PPFormula(1, 2, (Atom("R", (0, 1)), Atom("R", (1, 2)), Atom(p, (2,)))))
    return out


def _binary_templates(sys: GGSystem) -> list[PPFormula]:
    out = [PPFormula(2, 1, (Atom("R", (0, 2)), Atom("R", (1, 2))))]
    for orb in sys.orbits:
        p = orbit_name(orb[0])
        out.append(PPFormula(2, 1, (Atom("R", (0, 2)), Atom("R", (1, 2)), Atom(p, (2,)))))
    return out


def _closure_formula(phi: PPFormula, rel: frozenset, n: int) -> tuple[PPFormula, frozenset]:
    """Reflexive-symmetric-transitive closure of ``rel`` if phi defines a reflexive symmetric relation."""
    cur, f = rel, phi
    while True:
        nxt = _compose_rel(cur, cur)
        if nxt == cur:
            return f, cur
        fb = FormulaBuilder(2)
        (z,) = fb.fresh()
        fb.add(f, [0, z])
        fb.add(f, [z, 1])
        f, cur = fb.build(), nxt


def _restriction_candidates(sys: GGSystem):
    seen = set()
    for phi in _unary_templates(sys):
        s = frozenset(v for (v,) in eval_pp(sys.expanded, phi))
        if not s or len(s) == sys.n or s in seen:
            continue
        seen.add(s)
        sub = sys.restrict(sorted(s))
        if sub.has_triangle():
            yield len(sub.orbits), sorted(s), phi, sub


def _quotient_candidates(sys: GGSystem):
    seen = set()
    diag = {(v, v) for v in range(sys.n)}
    for phi in _binary_templates(sys):
        rel = eval_pp(sys.expanded, phi)
        if not diag <= rel or any((b, a) not in rel for a, b in rel):
            continue
        f, eqv = _closure_formula(phi, rel, sys.n)
        if eqv in seen or len(eqv) == sys.n:
            continue
        seen.add(eqv)
        labels = labels_of(sys.n, eqv)
        try:
            q = sys.quotient(labels)
        except ValueError:
            continue
        if find_pseudoloop(q) is None and any(a != b for a, b in q.edges) and q.has_triangle():
            yield len(q.orbits), labels, f, q


def minimize(sys: GGSystem, max_steps: int = 32) -> tuple[GGSystem, list[TraceStep]]:
    """Apply definable restrictions (preferred) and quotients while one keeps a triangle and no pseudoloop.

    Candidates come from a fixed family of formulas, so the result is minimal
    only with respect to that family.
    """
    trace: list[TraceStep] = []
    cur = sys
    for _ in range(max_steps):
        best = min(_restriction_candidates(cur), key=lambda c: (c[0], c[1]), default=None)
        if best is not None:
            _, subset, phi, new = best
            mapping = {v: i for i, v in enumerate(subset)}
            cert = _checked(cur, new, step_certificate(cur, new, phi, EQ, EDGE, mapping))
            trace.append(TraceStep("restrict", len(cur.orbits), len(new.orbits), new.n,
                                   f"restrict to {subset}", cert, {"S": phi}))
            cur = new
            continue
        best = min(_quotient_candidates(cur), key=lambda c: (c[0], c[1]), default=None)
        if best is not None:
            _, labels, f, new = best
            mapping = {v: labels[v] for v in range(cur.n)}
            cert = _checked(cur, new, step_certificate(cur, new, TRUE1, f, quotient_edge_formula(f), mapping))
            trace.append(TraceStep("quotient", len(cur.orbits), len(new.orbits), new.n,
                                   f"quotient with classes {labels}", cert, {"~": f}))
            cur = new
            continue
        break
    return cur, trace


# -- induced powers of K3 -----------------------------------------------------------------------

def _tk_adjacency(k: int) -> np.ndarray:
    t = power(clique(3), k)
    adj = np.zeros((3 ** k, 3 ** k), dtype=bool)
    for a, b in t.rel("R"):
        adj[a, b] = True
    return adj


def induced_Tk_copies(graph: FiniteStructure, k: int, node_cap: int = EMBED_NODE_CAP):
    """Injective maps ``v -> embedding[v]`` from T_k onto induced subgraphs, in lexicographic order."""
    n = graph.domain_size
    m = 3 ** k
    if m > n:
        return
    tk = _tk_adjacency(k)
    g = np.zeros((n, n), dtype=bool)
    for a, b in graph.rel("R"):
        g[a, b] = True
    sym = g & g.T
    deg = sym.sum(axis=1)
    ok = [v for v in range(n) if deg[v] >= 2 ** k and not g[v, v]]
    nodes = 0
    emb: list[int] = []

    def rec():
        nonlocal nodes
        i = len(emb)
        if i == m:
            yield tuple(emb)
            return
        for v in ok:
            if v in emb:
                continue
            nodes += 1
            if nodes > node_cap:
                raise CapExceeded(f"embedding search exceeded {node_cap} nodes")
            if all(g[emb[j], v] == tk[j, i] and g[v, emb[j]] == tk[i, j] for j in range(i)):
                emb.append(v)
                yield from rec()
                emb.pop()

    yield from rec()


def find_induced_Tk(graph: FiniteStructure, k: int, node_cap: int = EMBED_NODE_CAP) -> Optional[tuple[int, ...]]:
    return next(induced_Tk_copies(graph, k, node_cap), None)


# -- defining a vertex set with parameters ------------------------------------------------------

def canonical_formula(a: FiniteStructure, points: Sequence[int], atom_cap: int = CANONICAL_ATOM_CAP) -> PPFormula:
    """Formula defining the images of ``points`` under polymorphisms fixing every element.

    Variables are the elements of A^l (l = len(points)); the defined set is
    exactly the set of elements generated from ``points``.
    """
    n = a.domain_size
    l = len(points)
    total = sum(len(t) ** l for _, _, t in a.items())
    if total > atom_cap or n ** l > atom_cap:
        raise CapExceeded(f"canonical formula would need {max(total, n ** l)} atoms, cap {atom_cap}")
    w = [n ** (l - 1 - i) for i in range(l)]

    def var(cols) -> int:
        return 1 + sum(c * wi for c, wi in zip(cols, w))
    atoms = [Atom("=", (0, var(points)))]
    for c in range(n):
        atoms.append(Atom("=", (var([c] * l), Param(c))))
    for name, arity, tuples in a.items():
        for combo in itertools.product(tuples, repeat=l):
            args = tuple(var([combo[i][j] for i in range(l)]) for j in range(arity))
            atoms.append(Atom(name, args))
    return PPFormula(1, n ** l, tuple(atoms))


def define_subset(a: FiniteStructure, subset: Sequence[int], budget: int = 3_000) -> Optional[PPFormula]:
    """A formula with parameters defining ``subset``, or None if none was found within the caps."""
    subset = sorted(subset)
    if len(subset) == a.domain_size:
        return TRUE1
    target = [(v,) for v in subset]
    for params, depth in ((subset, 1), (range(a.domain_size), 1), (subset, 2)):
        phi = synthesize(a, target, params=params, max_exists=depth, budget=budget)
        if phi is not None:
            return phi
    try:
        phi = canonical_formula(a, subset)
    except CapExceeded:
        return None
    if eval_pp(a, phi) == frozenset(target):
        return phi
    return None


def tk_certificate(sys: GGSystem, k: int, embedding: Sequence[int]) -> Optional[InterpretationCertificate]:
    """Certificate interpreting T_k in the system via a parameter-definable induced copy."""
    dom = define_subset(sys.expanded, embedding)
    if dom is None:
        return None
    cert = make_certificate(1, dom, EQ, {"R": EDGE}, {(v,): t for t, v in enumerate(embedding)})
    ok, _ = verify_interpretation(sys.expanded, power(clique(3), k), cert)
    return cert if ok else None


# -- lemma on T_k bounds ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SQResult:
    S: frozenset
    Q: frozenset
    R_prime: frozenset
    s_reflexive: bool
    s_symmetric: bool
    r_in_q: bool
    q_pseudoloop_free: bool


def lemma33_formulas(a: str, b: str, c: str) -> tuple[PPFormula, PPFormula]:
    """The common-neighbour relation S and its two-sided extension Q, for orbit predicates a, b, c."""
    atoms = []
    for i, pred in enumerate((a, b, c)):
        nb, far = 2 + 2 * i, 3 + 2 * i
        atoms += [Atom("R", (0, nb)), Atom("R", (1, nb)), Atom("R", (nb, far)), Atom(pred, (far,))]
    s = PPFormula(2, 6, tuple(atoms))
    fb = FormulaBuilder(2)
    sv, t = fb.fresh(2)
    fb.atom("R", 0, sv)
    fb.add(s, [sv, 1])
    fb.add(s, [0, t])
    fb.atom("R", t, 1)
    return s, fb.build()


def lemma33_SQ(sys: GGSystem, a: int, b: int, c: int) -> SQResult:
    """Evaluate S, Q and R' for the orbits of vertices ``a``, ``b`` and ``c``."""
    preds = [orbit_name(sys.orbit_of(v)[0]) for v in (a, b, c)]
    if len(set(preds)) != 3:
        raise ValueError("the three vertices must lie in distinct orbits")
    s_phi, q_phi = lemma33_formulas(*preds)
    e = sys.expanded
    s = eval_pp(e, s_phi)
    q = eval_pp(e, q_phi)
    # Q-edges lying in a Q-triangle
    qs = set(q)
    verts = range(sys.n)
    rp = frozenset((u, v) for u, v in q if u != v and any(
        w not in (u, v) and (u, w) in qs and (v, w) in qs for w in verts))
    return SQResult(
        s, q, rp,
        s_reflexive=all((v, v) in s for v in verts),
        s_symmetric=all((y, x) in s for x, y in s),
        r_in_q=sys.edges <= q,
        q_pseudoloop_free=not has_pseudoloop_edges(sys, q),
    )


def tk_bound_holds(sys: GGSystem, k_max: int = 2) -> bool:
    """No induced T_k with 3^k above the orbit count, for k <= k_max."""
    orbits = len(sys.orbits)
    for k in range(1, k_max + 1):
        if 3 ** k > orbits and find_induced_Tk(sys.graph, k) is not None:
            return False
    return True


# -- the pipeline -------------------------------------------------------------------------------

@dataclass
class PipelineResult:
    outcome: str  # "pseudoloop" | "interpretation" | "unknown"
    witness: Optional[PseudoloopWitness] = None
    certificate: Optional[InterpretationCertificate] = None
    trace: list = field(default_factory=list)
    reason: str = ""

    def to_json(self) -> dict:
        out: dict = {"outcome": self.outcome}
        if self.witness is not None:
            out["witness"] = self.witness.to_json()
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_json()
        out["trace"] = [s.to_json() for s in self.trace]
        if self.reason:
            out["reason"] = self.reason
        return out


def _chain(certs: Sequence[InterpretationCertificate]) -> InterpretationCertificate:
    out = certs[0]
    for c in certs[1:]:
        out = compose_certificates(out, c)
    return out


def _tk_search(sys: GGSystem, copies_per_k: int = 4):
    """Largest k first; yields (k, certificate) for parameter-definable induced copies of T_k."""
    k = 1
    while 3 ** (k + 1) <= sys.n:
        k += 1
    for kk in range(k, 0, -1):
        for count, emb in enumerate(induced_Tk_copies(sys.graph, kk)):
            if count >= copies_per_k:
                break
            cert = tk_certificate(sys, kk, emb)
            if cert is not None:
                yield kk, cert


def _finish(base: GGSystem, chain: list, sys: GGSystem, trace: list) -> Optional[InterpretationCertificate]:
    k3 = clique(3)
    for k, cert in _tk_search(sys):
        full = _chain(chain + [cert, interpret_k3_in_Tk(k)])
        ok, _ = verify_interpretation(base.expanded, k3, full)
        if ok:
            trace.append(TraceStep("tk", len(sys.orbits), len(sys.orbits), 3 ** k,
                                   f"induced T_{k} defined with parameters", cert,
                                   {"domain": cert.domain_formula}))
            return full
    return None


def run_pseudoloop_pipeline(sys: GGSystem) -> PipelineResult:
    """Return a verified pseudoloop, a verified interpretation of K3, or unknown."""
    if sys.directed:
        raise ValueError("the pipeline handles undirected systems")
    if not sys.has_triangle():
        raise ValueError("graph contains no triangle")
    w = find_pseudoloop(sys)
    if w is not None:
        assert w.verify(sys)
        return PipelineResult("pseudoloop", witness=w)
    trace: list[TraceStep] = []
    try:
        cur, trace = minimize(sys)
        chain = [s.certificate for s in trace]
        edges1 = step1_edges(cur)
        if edges1 != cur.edges:
            new = cur.with_edges(edges1)
            cert = _checked(cur, new, step_certificate(cur, new, TRUE1, EQ, STEP1_FORMULA,
                                                       {v: v for v in range(cur.n)}))
            trace.append(TraceStep("closure", len(cur.orbits), len(new.orbits), new.n,
                                   "keep edges lying in a triangle", cert, {"R'": STEP1_FORMULA}))
            chain.append(cert)
            cur = new
        triangles = {a for a, _ in cur.edges}
        if len(triangles) == cur.n:
            eqv, steps = diamond_equiv(cur)
            labels = labels_of(cur.n, eqv)
            if max(labels) + 1 < cur.n and not any(labels[a] == labels[b] for a, b in cur.edges):
                new = cur.quotient(labels)
                if find_pseudoloop(new) is None:
                    f = diamond_formula(steps)
                    cert = _checked(cur, new, step_certificate(cur, new, TRUE1, f, quotient_edge_formula(f),
                                                               {v: labels[v] for v in range(cur.n)}))
                    trace.append(TraceStep("quotient", len(cur.orbits), len(new.orbits), new.n,
                                           f"diamond quotient after {steps} steps", cert, {"~": f}))
                    chain.append(cert)
                    cur = new
        base_chain = chain if chain else [identity_certificate(sys.expanded)]
        full = _finish(sys, base_chain, cur, trace)
        if full is None and (trace or cur is not sys):
            # fall back to a definable copy in the original system
            full = _finish(sys, [identity_certificate(sys.expanded)], sys, trace)
    except CapExceeded as exc:
        return PipelineResult("unknown", trace=trace, reason=str(exc))
    if full is None:
        return PipelineResult("unknown", trace=trace, reason="no parameter-definable induced T_k found")
    return PipelineResult("interpretation", certificate=full, trace=trace)


# -- digraphs ---------------------------------------------------------------------------------

def is_smooth(digraph: FiniteStructure) -> bool:
    r = digraph.rel("R")
    out = {a for a, _ in r}
    inc = {b for _, b in r}
    return all(v in out and v in inc for v in range(digraph.domain_size))


def algebraic_length(digraph: FiniteStructure) -> float:
    """gcd of closed-walk imbalances per weak component, minimum over components; ``inf`` if none."""
    n = digraph.domain_size
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for a, b in digraph.rel("R"):
        adj[a].append((b, 1))
        adj[b].append((a, -1))
    pot: list[Optional[int]] = [None] * n
    best = math.inf
    for s in range(n):
        if pot[s] is not None:
            continue
        pot[s] = 0
        stack = [s]
        g = 0
        while stack:
            u = stack.pop()
            for v, d in adj[u]:
                if pot[v] is None:
                    pot[v] = pot[u] + d
                    stack.append(v)
                else:
                    g = math.gcd(g, abs(pot[u] + d - pot[v]))
        if g:
            best = min(best, g)
    return best


def weakly_connected(digraph: FiniteStructure) -> bool:
    n = digraph.domain_size
    seen = {0}
    stack = [0]
    r = digraph.rel("R")
    nb: dict = {}
    for a, b in r:
        nb.setdefault(a, set()).add(b)
        nb.setdefault(b, set()).add(a)
    while stack:
        u = stack.pop()
        for v in nb.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def finite_loop_check(digraph: FiniteStructure, node_limit: Optional[int] = 2_000_000) -> str:
    """'confirmed', 'contradicted', 'not applicable' or 'unknown'.

    For a smooth loopless digraph of algebraic length 1 the conclusion is
    checked through its algebraic counterpart: no 4-ary Siggers operation
    fixing every element.
    """
    from .clones import find_siggers4

    r = digraph.rel("R")
    if any(a == b for a, b in r) or not is_smooth(digraph) or algebraic_length(digraph) != 1:
        return "not applicable"
    try:
        w = find_siggers4(digraph, constants=range(digraph.domain_size), node_limit=node_limit)
    except CapExceeded:
        return "unknown"
    return "confirmed" if w is None else "contradicted"


# -- three orbits with a K3 quotient ------------------------------------------------------------

class HypothesisError(ValueError):
    pass


def _orbit_union_formula(w_pred: str) -> PPFormula:
    # x in the union of the two orbits other than W: x has an out-neighbour in W
    return PPFormula(1, 1, (Atom("R", (0, 1)), Atom(w_pred, (1,))))


def prop34_formulas(sim: PPFormula, preds: tuple[str, str, str]) -> tuple[PPFormula, PPFormula]:
    """S = S1 & S2 & S3 & S4 and Q for the current equivalence ``sim``; preds name U, V, W."""
    u, v, w = preds
    in_uv, in_uw, in_vw = _orbit_union_formula(w), _orbit_union_formula(v), _orbit_union_formula(u)

    def s12(fb, x, y, union):
        z1, z2 = fb.fresh(2)
        fb.atom("R", z1, x)
        fb.add(sim, [z1, z2])
        fb.atom("R", z2, y)
        fb.add(union, [z1])

    def s3(fb, x, y):
        z1, z2, z3, z4 = fb.fresh(4)
        fb.atom("R", z1, x)
        fb.add(sim, [z1, z2])
        fb.atom("R", z2, z3)
        fb.atom("R", z4, z3)
        fb.atom("R", z4, y)
        fb.add(in_uv, [z1])
        fb.add(in_uv, [z3])
        fb.add(in_vw, [z4])

    fb = FormulaBuilder(2)
    s12(fb, 0, 1, in_uv)
    s12(fb, 0, 1, in_uw)
    s3(fb, 0, 1)
    s3(fb, 1, 0)
    s = fb.build()
    fb = FormulaBuilder(2)
    sv, t = fb.fresh(2)
    fb.add(sim, [0, sv])
    fb.add(s, [sv, 1])
    fb.add(s, [t, 0])
    fb.add(sim, [t, 1])
    return s, fb.build()


@dataclass
class GrowthRound:
    pair: tuple[int, int]
    size_before: int
    size_after: int


@dataclass
class Prop34Result:
    certificate: InterpretationCertificate
    equivalence: frozenset
    rounds: list
    quotient: GGSystem


def check_prop34_hypotheses(sys: GGSystem) -> list[str]:
    g = sys.graph
    problems = []
    if len(sys.orbits) != 3:
        problems.append(f"{len(sys.orbits)} orbits instead of 3")
    else:
        oi = sys.orbit_index
        pairs = {(oi[a], oi[b]) for a, b in sys.edges}
        want = {(i, j) for i in range(3) for j in range(3) if i != j}
        if pairs != want:
            problems.append("orbit quotient is not K3")
    if not is_smooth(g):
        problems.append("not smooth")
    if not weakly_connected(g):
        problems.append("not connected")
    if algebraic_length(g) != 1:
        problems.append("algebraic length is not 1")
    if find_pseudoloop(sys) is not None:
        problems.append("has a pseudoloop")
    return problems


def _violation(sys: GGSystem, sim: frozenset) -> Optional[tuple[int, int, int, int]]:
    oi = sys.orbit_index
    out: dict = {}
    inc: dict = {}
    for a, b in sys.edges:
        out.setdefault(a, []).append(b)
        inc.setdefault(b, []).append(a)
    for a, b in sorted(sim):
        for nb in (out, inc):
            for a2 in nb.get(a, ()):
                for b2 in nb.get(b, ()):
                    if oi[a2] == oi[b2] and (a2, b2) not in sim:
                        return a, b, a2, b2
    return None


def prop34_grow(sys: GGSystem, sim: frozenset, sim_formula: PPFormula):
    """One growth round: returns (new equivalence, its formula, violating tuple) or None if (ii), (iii) hold."""
    bad = _violation(sys, sim)
    if bad is None:
        return None
    a, b, a2, b2 = bad
    oi = sys.orbit_index
    names = [orbit_name(o[0]) for o in sys.orbits]
    u, v = oi[a], oi[a2]
    if u == v:
        raise HypothesisError("an edge inside an orbit")
    w = 3 - u - v
    e = sys.expanded.with_relations({"sim": sim}, {"sim": 2})
    sim_atom = PPFormula(2, 0, (Atom("sim", (0, 1)),))
    s_sym, q_sym = prop34_formulas(sim_atom, (names[u], names[v], names[w]))
    s_rel = eval_pp(e, s_sym)
    q_rel = eval_pp(e, q_sym)
    n = sys.n
    assert all((x, x) in s_rel for x in range(n)), "S is not reflexive"
    assert (a2, b2) in s_rel and (b2, a2) in s_rel
    assert all(oi[x] == oi[y] for x, y in s_rel), "S violates (i)"
    assert sim <= q_rel and (a2, b2) in q_rel
    _, q_formula = prop34_formulas(sim_formula, (names[u], names[v], names[w]))
    f, new = _closure_formula(q_formula, q_rel, n)
    assert all(oi[x] == oi[y] for x, y in new), "new equivalence violates (i)"
    assert len(new) > len(sim)
    return new, f, bad


def prop34_pipeline(sys: GGSystem, max_rounds: int = 64) -> Prop34Result:
    """Grow an orbit-respecting equivalence until neighbours in one orbit are related, then factor."""
    problems = check_prop34_hypotheses(sys)
    if problems:
        raise HypothesisError("; ".join(problems))
    n = sys.n
    sim = frozenset((v, v) for v in range(n))
    sim_formula = EQ
    rounds = []
    for _ in range(max_rounds):
        step = prop34_grow(sys, sim, sim_formula)
        if step is None:
            break
        new, f, bad = step
        rounds.append(GrowthRound((bad[2], bad[3]), len(sim), len(new)))
        sim, sim_formula = new, f
    else:
        raise CapExceeded(f"equivalence still growing after {max_rounds} rounds")
    # prefer a short formula for the final equivalence when one exists
    short = synthesize(sys.expanded, sim, max_exists=2, budget=3_000)
    if short is not None:
        sim_formula = short
    labels = labels_of(n, sim)
    q = sys.quotient(labels)
    cert = _checked(sys, q, step_certificate(sys, q, TRUE1, sim_formula, quotient_edge_formula(sim_formula),
                                             {v: labels[v] for v in range(n)}))
    k3 = clique(3)
    qr = q.edges
    if q.n == 3 and qr == k3.rel("R"):
        final = cert
    elif all((b, a) in qr for a, b in qr):
        sym_q = GGSystem(q.graph, q.group, False)
        found = next(_tk_search(sym_q), None)
        if found is None:
            raise CapExceeded("quotient has no parameter-definable triangle within the caps")
        k, c = found
        final = compose_certificates(cert, compose_certificates(c, interpret_k3_in_Tk(k)))
    else:
        raise CapExceeded("directed quotient: the finite loop lemma step is not constructive here")
    ok, diag = verify_interpretation(sys.expanded, k3, final)
    if not ok:
        raise CapExceeded(f"composed certificate did not verify: {diag}")
    return Prop34Result(final, sim, rounds, q)


# -- random systems --------------------------------------------------------------------------

def _small_order_permutation(rng: random.Random, n: int) -> Permutation:
    # disjoint cycles of length <= 4 keep the order small
    pts = list(range(n))
    rng.shuffle(pts)
    cycles = []
    while pts:
        size = min(len(pts), rng.choice((1, 2, 2, 3, 3, 4)))
        cycles.append(pts[:size])
        pts = pts[size:]
    return Permutation.from_cycles(n, cycles)


def random_system(rng: random.Random, n_max: int = 9, order_cap: int = 12) -> GGSystem:
    """A random undirected gg-system containing a triangle."""
    while True:
        n = rng.randint(3, n_max)
        gens = [_small_order_permutation(rng, n) for _ in range(rng.choice((0, 1, 1, 1, 2)))]
        try:
            group = generate(gens, degree=n, order_cap=order_cap)
        except CapExceeded:
            continue
        a, b, c = rng.sample(range(n), 3)
        edges = set()
        for x, y in ((a, b), (b, c), (a, c)):
            for g in group.elements:
                edges.add((g(x), g(y)))
                edges.add((g(y), g(x)))
        for _ in range(rng.randint(0, n)):
            x, y = rng.sample(range(n), 2)
            if rng.random() < 0.5:
                for g in group.elements:
                    edges.add((g(x), g(y)))
                    edges.add((g(y), g(x)))
        if any(x == y for x, y in edges):
            continue
        graph = FiniteStructure.build(n, {"R": edges}, {"R": 2})
        sys = GGSystem(graph, group)
        if sys.has_triangle():
            return sys


def corpus(seed: int, count: int, n_max: int = 9, order_cap: int = 12,
           pseudoloop_free_share: float = 0.6) -> list[GGSystem]:
    """Seeded corpus; roughly ``pseudoloop_free_share`` of the systems have no pseudoloop."""
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        s = random_system(rng, n_max, order_cap)
        want_free = rng.random() < pseudoloop_free_share
        if want_free == (find_pseudoloop(s) is None):
            out.append(s)
    return out


def two_triangles_system() -> GGSystem:
    """Two disjoint triangles with the group swapping them."""
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    return GGSystem.make(6, edges, [[3, 4, 5, 0, 1, 2]])


def three_orbit_system() -> GGSystem:
    """Six vertices, two per orbit, swapped in pairs; the orbit quotient is K3."""
    edges = [(0, 2), (2, 4), (4, 0), (1, 3), (3, 5), (5, 1), (0, 3), (1, 2)]
    return GGSystem.make(6, edges, [[1, 0, 3, 2, 5, 4]])
