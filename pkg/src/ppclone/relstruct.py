"""Finite relational structures, homomorphisms, powers and cores."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .csp import CapExceeded, Problem

DEFAULT_POWER_CAP = 1 << 16
DEFAULT_CORE_CAP = 12


class SignatureMismatch(ValueError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Signature:
    symbols: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [s for s, _ in self.symbols]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate relation names in {names}")
        for name, arity in self.symbols:
            if arity < 1:
                raise ValueError(f"relation {name!r} has arity {arity} < 1")

    def arity(self, name: str) -> int:
        for s, k in self.symbols:
            if s == name:
                return k
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.symbols)


@dataclass(frozen=True)
class FiniteStructure:
    """Domain ``0..domain_size-1`` with named relations stored as sorted tuple tuples."""

    domain_size: int
    signature: Signature
    relations: tuple[tuple[tuple[int, ...], ...], ...] = field(repr=False)

    def __post_init__(self):
        n = self.domain_size
        if n < 1:
            raise ValueError("domain size must be positive")
        if len(self.relations) != len(self.signature.symbols):
            raise ValueError("one tuple set per symbol required")
        for (name, arity), tuples in zip(self.signature.symbols, self.relations):
            for t in tuples:
                if len(t) != arity:
                    raise ValueError(f"{name}: tuple {t} does not have arity {arity}")
                for v in t:
                    if not 0 <= v < n:
                        raise ValueError(f"{name}: entry {v} of {t} out of range 0..{n - 1}")

    @classmethod
    def build(cls, n: int, relations: Mapping[str, Iterable[Sequence[int]]],
              arities: Optional[Mapping[str, int]] = None) -> "FiniteStructure":
        syms = []
        rels = []
        for name, tuples in relations.items():
            ts = sorted({tuple(int(v) for v in t) for t in tuples})
            if arities and name in arities:
                k = arities[name]
            elif ts:
                k = len(ts[0])
            else:
                raise ValueError(f"arity of empty relation {name!r} must be given")
            syms.append((name, k))
            rels.append(tuple(ts))
        return cls(n, Signature(tuple(syms)), tuple(rels))

    def rel(self, name: str) -> frozenset:
        return self._relsets[name]

    @cached_property
    def _relsets(self) -> dict[str, frozenset]:
        return {s: frozenset(ts) for (s, _), ts in zip(self.signature.symbols, self.relations)}

    def items(self):
        for (name, arity), tuples in zip(self.signature.symbols, self.relations):
            yield name, arity, tuples

    def with_relations(self, extra: Mapping[str, Iterable[Sequence[int]]],
                       arities: Optional[Mapping[str, int]] = None) -> "FiniteStructure":
        rels = {name: tuples for name, _, tuples in self.items()}
        ar = {name: arity for name, arity, _ in self.items()}
        for k, v in extra.items():
            rels[k] = v
        if arities:
            ar.update(arities)
        for k, v in extra.items():
            if k not in ar:
                v = list(v)
                rels[k] = v
                if v:
                    ar[k] = len(v[0])
        return FiniteStructure.build(self.domain_size, rels, ar)

    def induced(self, vertices: Sequence[int]) -> "FiniteStructure":
        """Induced substructure on ``vertices``, relabelled ``0..len-1`` in the given order."""
        index = {v: i for i, v in enumerate(vertices)}
        rels = {}
        for name, _, tuples in self.items():
            rels[name] = [tuple(index[v] for v in t) for t in tuples if all(v in index for v in t)]
        return FiniteStructure.build(len(vertices), rels, dict(self.signature.symbols))

    def to_json(self) -> dict:
        return {
            "domain": self.domain_size,
            "relations": [
                {"name": name, "arity": arity, "tuples": [list(t) for t in tuples]}
                for name, arity, tuples in self.items()
            ],
        }

    @classmethod
    def from_json(cls, data) -> "FiniteStructure":
        if isinstance(data, str):
            try:
                data = json.loads(data)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict) or "domain" not in data:
            raise ParseError("structure: expected an object with a 'domain' field")
        n = data["domain"]
        if not isinstance(n, int) or n < 1:
            raise ParseError(f"domain: expected a positive integer, got {n!r}")
        rels = {}
        arities = {}
        for i, r in enumerate(data.get("relations", [])):
            where = f"relations[{i}]"
            try:
                name, arity, tuples = r["name"], r["arity"], r["tuples"]
            except (KeyError, TypeError):
                raise ParseError(f"{where}: needs 'name', 'arity' and 'tuples'") from None
            if name in rels:
                raise ParseError(f"{where}: duplicate relation name {name!r}")
            if not isinstance(arity, int) or arity < 1:
                raise ParseError(f"{where}.arity: expected a positive integer")
            for j, t in enumerate(tuples):
                if len(t) != arity:
                    raise ParseError(f"{where}.tuples[{j}]: length {len(t)} != arity {arity}")
                for p, v in enumerate(t):
                    if not isinstance(v, int) or not 0 <= v < n:
                        raise ParseError(f"{where}.tuples[{j}][{p}]: value {v!r} out of range 0..{n - 1}")
            rels[name] = [tuple(t) for t in tuples]
            arities[name] = arity
        return cls.build(n, rels, arities)


# -- concrete structures ------------------------------------------------------

def clique(n: int) -> FiniteStructure:
    return FiniteStructure.build(n, {"R": [(a, b) for a in range(n) for b in range(n) if a != b]})


def directed_cycle(n: int) -> FiniteStructure:
    return FiniteStructure.build(n, {"R": [(i, (i + 1) % n) for i in range(n)]})


def symmetric_graph(n: int, edges: Iterable[tuple[int, int]]) -> FiniteStructure:
    es = set()
    for a, b in edges:
        es.add((a, b))
        es.add((b, a))
    return FiniteStructure.build(n, {"R": es}, {"R": 2})


def disjoint_union(a: FiniteStructure, b: FiniteStructure) -> FiniteStructure:
    if a.signature != b.signature:
        raise SignatureMismatch("disjoint union needs equal signatures")
    off = a.domain_size
    rels = {}
    for (name, _, ta), (_, _, tb) in zip(a.items(), b.items()):
        rels[name] = list(ta) + [tuple(v + off for v in t) for t in tb]
    return FiniteStructure.build(off + b.domain_size, rels, dict(a.signature.symbols))


def boolean_clause_structure() -> FiniteStructure:
    """({0,1}; R000, R001, R011, R111) where R_abc omits exactly the triple abc."""
    cube = list(itertools.product((0, 1), repeat=3))
    rels = {}
    for miss in ((0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)):
        rels["R" + "".join(map(str, miss))] = [t for t in cube if t != miss]
    return FiniteStructure.build(2, rels)


def one_in_three_structure() -> FiniteStructure:
    return FiniteStructure.build(2, {"R": [(0, 0, 1), (0, 1, 0), (1, 0, 0)]})


def twin_triangles_structure() -> FiniteStructure:
    """Two triangles a_0, a_1 (a in 0..2, element 3*i + a) with S linking opposite copies."""
    R = [(3 * i + a, 3 * i + b) for i in (0, 1) for a in range(3) for b in range(3) if a != b]
    S = [(3 * i + a, 3 * j + b) for i in (0, 1) for j in (0, 1) if i != j for a in range(3) for b in range(3)]
    return FiniteStructure.build(6, {"R": R, "S": S})


# -- homomorphisms ------------------------------------------------------------

def _check_sig(a: FiniteStructure, b: FiniteStructure) -> None:
    if a.signature != b.signature:
        raise SignatureMismatch(f"signatures differ: {a.signature.symbols} vs {b.signature.symbols}")


def is_homomorphism(a: FiniteStructure, b: FiniteStructure, m: Sequence[int]) -> bool:
    _check_sig(a, b)
    if len(m) != a.domain_size or any(not 0 <= v < b.domain_size for v in m):
        return False
    for name, _, tuples in a.items():
        target = b.rel(name)
        for t in tuples:
            if tuple(m[v] for v in t) not in target:
                return False
    return True


def _hom_problem(a: FiniteStructure, b: FiniteStructure, constraints, node_limit) -> Problem:
    _check_sig(a, b)
    p = Problem(a.domain_size, b.domain_size, node_limit)
    for name, _, tuples in a.items():
        rid = p.relation(b.rel(name)) if b.rel(name) else None
        if not tuples:
            continue
        if rid is None:
            p.restrict(0, 0)
            continue
        p.add(rid, np.array(tuples, dtype=np.int64))
    for v, val in (constraints or {}).items():
        if not 0 <= v < a.domain_size:
            raise ValueError(f"constraint on element {v} outside the source domain")
        if not 0 <= val < b.domain_size:
            raise ValueError(f"constraint value {val} outside the target domain")
        p.fix(v, val)
    return p


def homomorphisms(a: FiniteStructure, b: FiniteStructure, constraints: Optional[Mapping[int, int]] = None,
                  node_limit: Optional[int] = None):
    """All homomorphisms ``a -> b`` extending ``constraints``, in lexicographic order."""
    return _hom_problem(a, b, constraints, node_limit).solutions()


def hom_search(a: FiniteStructure, b: FiniteStructure, constraints: Optional[Mapping[int, int]] = None,
               node_limit: Optional[int] = None) -> Optional[tuple[int, ...]]:
    """The lexicographically least homomorphism extending ``constraints``, or None."""
    return _hom_problem(a, b, constraints, node_limit).first()


def power(a: FiniteStructure, k: int, cap: int = DEFAULT_POWER_CAP) -> FiniteStructure:
    """k-th categorical power; element (x_1..x_k) is encoded base n, x_1 most significant."""
    n = a.domain_size
    if k < 1:
        raise ValueError("power exponent must be positive")
    if n ** k > cap:
        raise CapExceeded(f"power domain {n}^{k} exceeds cap {cap}")
    rels = {}
    for name, arity, tuples in a.items():
        if not tuples:
            rels[name] = []
            continue
        arr = np.array(tuples, dtype=np.int64)
        acc = np.zeros((1, arity), dtype=np.int64)
        for _ in range(k):
            acc = (acc[:, None, :] * n + arr[None, :, :]).reshape(-1, arity)
        rels[name] = [tuple(r) for r in acc.tolist()]
    return FiniteStructure.build(n ** k, rels, dict(a.signature.symbols))


def decode(x: int, n: int, k: int) -> tuple[int, ...]:
    out = []
    for _ in range(k):
        x, r = divmod(x, n)
        out.append(r)
    return tuple(reversed(out))


def encode(t: Sequence[int], n: int) -> int:
    x = 0
    for v in t:
        x = x * n + v
    return x


def endomorphisms(a: FiniteStructure) -> list[tuple[int, ...]]:
    return list(homomorphisms(a, a))


def automorphisms(a: FiniteStructure):
    from .permgroup import Permutation, PermutationGroup

    perms = [m for m in homomorphisms(a, a) if len(set(m)) == a.domain_size and _reflects(a, m)]
    return PermutationGroup.from_elements(a.domain_size, [Permutation(m) for m in perms])


def _reflects(a: FiniteStructure, m: Sequence[int]) -> bool:
    # a bijective endomorphism of a finite structure is an automorphism, kept as a cheap guard
    for name, _, tuples in a.items():
        if len({tuple(m[v] for v in t) for t in tuples}) != len(tuples):
            return False
    return True


def is_core(a: FiniteStructure) -> bool:
    return all(len(set(m)) == a.domain_size for m in homomorphisms(a, a))


def core_of(a: FiniteStructure, cap: int = DEFAULT_CORE_CAP):
    """Smallest retract; ties broken by the lexicographically least vertex set.

    Returns ``(core, retraction, vertices)`` where ``core`` is the induced
    substructure on ``vertices`` (relabelled in increasing order) and
    ``retraction`` maps ``a`` onto ``vertices`` fixing them pointwise.
    """
    n = a.domain_size
    if n > cap:
        raise CapExceeded(f"core search on {n} elements exceeds cap {cap}")
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            mask = 0
            for v in subset:
                mask |= 1 << v
            p = _hom_problem(a, a, {v: v for v in subset}, None)
            for v in range(n):
                p.restrict(v, mask)
            r = p.first()
            if r is not None:
                return a.induced(list(subset)), r, subset
    raise AssertionError("the identity is always a retraction")


def is_isomorphic(a: FiniteStructure, b: FiniteStructure) -> Optional[tuple[int, ...]]:
    """An isomorphism ``a -> b`` if one exists."""
    if a.signature != b.signature or a.domain_size != b.domain_size:
        return None
    if any(len(ta) != len(tb) for (_, _, ta), (_, _, tb) in zip(a.items(), b.items())):
        return None
    for m in homomorphisms(a, b):
        if len(set(m)) == a.domain_size:
            return m
    return None
