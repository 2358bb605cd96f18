"""Finite permutation groups given by generators."""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .csp import CapExceeded

DEFAULT_ORDER_CAP = 10 ** 6
DEFAULT_TUPLE_CAP = 10 ** 6


@dataclass(frozen=True)
class Permutation:
    images: tuple[int, ...]

    def __init__(self, images: Iterable[int]):
        images = tuple(int(v) for v in images)
        if sorted(images) != list(range(len(images))):
            raise ValueError(f"{images} is not a permutation")
        object.__setattr__(self, "images", images)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(range(n))

    @classmethod
    def from_cycles(cls, n: int, cycles: Iterable[Sequence[int]]) -> "Permutation":
        img = list(range(n))
        for cyc in cycles:
            for i, v in enumerate(cyc):
                img[v] = cyc[(i + 1) % len(cyc)]
        return cls(img)

    @property
    def degree(self) -> int:
        return len(self.images)

    def __call__(self, x: int) -> int:
        return self.images[x]

    def __mul__(self, other: "Permutation") -> "Permutation":
        # (p * q)(x) = p(q(x))
        return Permutation(self.images[v] for v in other.images)

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.images)
        for i, v in enumerate(self.images):
            inv[v] = i
        return Permutation(inv)

    def is_identity(self) -> bool:
        return all(i == v for i, v in enumerate(self.images))

    def apply(self, t: Sequence[int]) -> tuple[int, ...]:
        return tuple(self.images[v] for v in t)


class PermutationGroup:
    """Group generated by ``generators``; the element set is built on first use."""

    def __init__(self, degree: int, generators: Sequence[Permutation], order_cap: int = DEFAULT_ORDER_CAP):
        for g in generators:
            if g.degree != degree:
                raise ValueError(f"generator of degree {g.degree} in a group of degree {degree}")
        self.degree = degree
        self.generators = tuple(generators)
        self.order_cap = order_cap
        self._elements: Optional[frozenset] = None
        self._lock = threading.Lock()

    @classmethod
    def from_elements(cls, degree: int, elements: Sequence[Permutation]) -> "PermutationGroup":
        g = cls(degree, [e for e in elements if not e.is_identity()])
        els = frozenset(elements) | {Permutation.identity(degree)}
        g._elements = els
        return g

    @property
    def elements(self) -> frozenset:
        if self._elements is None:
            with self._lock:
                if self._elements is None:
                    self._elements = self._closure()
        return self._elements

    def _closure(self) -> frozenset:
        ident = Permutation.identity(self.degree)
        seen = {ident}
        queue = deque([ident])
        while queue:
            p = queue.popleft()
            for g in self.generators:
                q = g * p
                if q not in seen:
                    seen.add(q)
                    if len(seen) > self.order_cap:
                        raise CapExceeded(f"group order exceeds cap {self.order_cap}")
                    queue.append(q)
        return frozenset(seen)

    @property
    def order(self) -> int:
        return len(self.elements)

    def __contains__(self, p: Permutation) -> bool:
        return p in self.elements

    def sorted_elements(self) -> list[Permutation]:
        return sorted(self.elements, key=lambda p: p.images)

    def orbit_of(self, t: Sequence[int]) -> frozenset:
        t = tuple(t)
        seen = {t}
        queue = deque([t])
        while queue:
            u = queue.popleft()
            for g in self.generators:
                w = g.apply(u)
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return frozenset(seen)

    def element_mapping(self, src: Sequence[int], dst: Sequence[int]) -> Optional[Permutation]:
        """Some group element sending tuple ``src`` to ``dst``, found by search on the orbit."""
        src, dst = tuple(src), tuple(dst)
        ident = Permutation.identity(self.degree)
        parent = {src: ident}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if u == dst:
                return parent[u]
            for g in self.generators:
                w = g.apply(u)
                if w not in parent:
                    parent[w] = g * parent[u]
                    queue.append(w)
        return None

    def orbits_on_tuples(self, k: int, cap: int = DEFAULT_TUPLE_CAP) -> dict[tuple[int, ...], list[tuple[int, ...]]]:
        """Orbits on k-tuples, keyed by their lexicographically least member."""
        if self.degree ** k > cap:
            raise CapExceeded(f"{self.degree}^{k} tuples exceed cap {cap}")
        done: set = set()
        out = {}
        for t in itertools.product(range(self.degree), repeat=k):
            if t in done:
                continue
            orb = self.orbit_of(t)
            done |= orb
            out[t] = sorted(orb)
        return out

    def point_orbits(self) -> list[list[int]]:
        return [[t[0] for t in orb] for orb in self.orbits_on_tuples(1).values()]

    def is_invariant(self, relation: Iterable[Sequence[int]]) -> bool:
        rel = {tuple(t) for t in relation}
        return all(g.apply(t) in rel for g in self.generators for t in rel)

    def to_json(self) -> dict:
        return {"degree": self.degree, "generators": [list(g.images) for g in self.generators]}

    @classmethod
    def from_json(cls, data) -> "PermutationGroup":
        from .relstruct import ParseError

        try:
            n = data["degree"]
            gens = data["generators"]
        except (KeyError, TypeError):
            raise ParseError("group: expected {'degree': n, 'generators': [...]}") from None
        perms = []
        for i, g in enumerate(gens):
            if len(g) != n:
                raise ParseError(f"generators[{i}]: length {len(g)} != degree {n}")
            try:
                perms.append(Permutation(g))
            except ValueError as exc:
                raise ParseError(f"generators[{i}]: {exc}") from None
        return cls(n, perms)


def generate(gens: Sequence[Permutation], degree: Optional[int] = None,
             order_cap: int = DEFAULT_ORDER_CAP) -> PermutationGroup:
    """Group generated by ``gens`` with its element set materialised eagerly."""
    if degree is None:
        if not gens:
            raise ValueError("degree needed for an empty generator list")
        degree = gens[0].degree
    if any(g.degree != degree for g in gens):
        raise ValueError("generators have different degrees")
    g = PermutationGroup(degree, gens, order_cap)
    _ = g.elements
    return g


def trivial_group(n: int) -> PermutationGroup:
    return generate([], degree=n)


def symmetric_group(n: int) -> PermutationGroup:
    if n < 2:
        return trivial_group(n)
    gens = [Permutation.from_cycles(n, [list(range(n))]), Permutation.from_cycles(n, [(0, 1)])]
    return generate(gens)
