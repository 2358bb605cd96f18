"""Small finite-domain constraint solver shared by the search routines.

Domains are Python ints used as bitmasks over ``0..n-1``.  Binary
constraints propagate by arc consistency with cached support unions,
wider constraints by generalised arc consistency over their tuple lists.
Branching visits variables in index order and values in ascending order,
so solutions come out in lexicographic order and the first one is the
lexicographically least.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Sequence
from typing import Optional

import numpy as np


class CapExceeded(Exception):
    """A configured search or size cap was hit; the answer is unknown."""


def bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def single_value(mask: int) -> int:
    return mask.bit_length() - 1


class _BinaryRel:
    __slots__ = ("fwd", "bwd", "cache_f", "cache_b")

    def __init__(self, n: int, pairs: Iterable[tuple[int, int]]):
        fwd = [0] * n
        bwd = [0] * n
        for a, b in pairs:
            fwd[a] |= 1 << b
            bwd[b] |= 1 << a
        self.fwd = fwd
        self.bwd = bwd
        self.cache_f: dict[int, int] = {}
        self.cache_b: dict[int, int] = {}

    def support(self, mask: int, forward: bool) -> int:
        cache = self.cache_f if forward else self.cache_b
        hit = cache.get(mask)
        if hit is None:
            table = self.fwd if forward else self.bwd
            hit = 0
            for a in bits(mask):
                hit |= table[a]
            cache[mask] = hit
        return hit


class Problem:
    """A constraint network over variables ``0..nvars-1`` with domain ``0..n-1``."""

    def __init__(self, nvars: int, n: int, node_limit: Optional[int] = None):
        self.n = n
        self.nvars = nvars
        full = (1 << n) - 1
        self.dom = [full] * nvars
        self.node_limit = node_limit
        self.nodes = 0
        self._rels: list = []
        self._rel_index: dict = {}
        # per variable: list of (binary rel, forward?, neighbour array)
        self._adj: list[list] = [[] for _ in range(nvars)]
        self._pending: list[tuple[int, int, bool, np.ndarray]] = []
        self._tables: list[tuple[tuple[int, ...], list[tuple[int, ...]]]] = []
        self._tables_of: list[list[int]] = [[] for _ in range(nvars)]
        self._trail: list[tuple[int, int]] = []
        self._failed = False
        self._built = False

    # -- model building -------------------------------------------------

    def restrict(self, var: int, mask: int) -> None:
        self.dom[var] &= mask
        if not self.dom[var]:
            self._failed = True

    def fix(self, var: int, value: int) -> None:
        self.restrict(var, 1 << value)

    def relation(self, tuples: Iterable[Sequence[int]]) -> int:
        """Register a relation and return its id (deduplicated by content)."""
        key = frozenset(tuple(int(v) for v in t) for t in tuples)
        rid = self._rel_index.get(key)
        if rid is None:
            rid = len(self._rels)
            self._rel_index[key] = rid
            arity = len(next(iter(key))) if key else 0
            if arity == 2:
                self._rels.append((key, _BinaryRel(self.n, key)))
            else:
                self._rels.append((key, None))
        return rid

    def add(self, rid: int, scopes) -> None:
        """Require every row of ``scopes`` (variables) to lie in relation ``rid``."""
        key, brel = self._rels[rid]
        scopes = np.asarray(scopes, dtype=np.int64)
        if scopes.ndim == 1:
            scopes = scopes[None, :]
        if len(scopes) == 0:
            return
        if not key:
            self._failed = True
            return
        arity = scopes.shape[1]
        if arity == 1:
            mask = 0
            for (a,) in key:
                mask |= 1 << a
            for v in np.unique(scopes[:, 0]):
                self.restrict(int(v), mask)
            return
        if arity == 2:
            same = scopes[:, 0] == scopes[:, 1]
            if same.any():
                mask = 0
                for a, b in key:
                    if a == b:
                        mask |= 1 << a
                for v in np.unique(scopes[same, 0]):
                    self.restrict(int(v), mask)
            rest = scopes[~same]
            if len(rest):
                self._pending.append((rid, rest))
            return
        for row in np.unique(scopes, axis=0):
            scope = tuple(int(v) for v in row)
            if len(set(scope)) < arity:
                pos = {}
                for i, v in enumerate(scope):
                    pos.setdefault(v, i)
                tuples = [t for t in key if all(t[i] == t[pos[v]] for i, v in enumerate(scope))]
                order = sorted(pos, key=pos.get)
                tuples = sorted({tuple(t[pos[v]] for v in order) for t in tuples})
                scope = tuple(order)
                if len(scope) == 1:
                    mask = 0
                    for (a,) in tuples:
                        mask |= 1 << a
                    self.restrict(scope[0], mask)
                    continue
                if len(scope) == 2:
                    self.add(self.relation(tuples), [scope])
                    continue
            else:
                tuples = sorted(key)
            cid = len(self._tables)
            self._tables.append((scope, tuples))
            for v in set(scope):
                self._tables_of[v].append(cid)

    def _build(self) -> None:
        if self._built:
            return
        self._built = True
        by_rel: dict[int, np.ndarray] = {}
        for rid, rows in self._pending:
            by_rel[rid] = rows if rid not in by_rel else np.vstack([by_rel[rid], rows])
        self._pending = []
        for rid, rows in by_rel.items():
            brel = self._rels[rid][1]
            rows = np.unique(rows, axis=0)
            for col, forward in ((0, True), (1, False)):
                order = np.argsort(rows[:, col], kind="stable")
                srt = rows[order]
                heads, starts = np.unique(srt[:, col], return_index=True)
                ends = list(starts[1:]) + [len(srt)]
                other = srt[:, 1 - col]
                for h, s, e in zip(heads.tolist(), starts.tolist(), ends):
                    self._adj[h].append((brel, forward, other[s:e].tolist()))

    # -- propagation ----------------------------------------------------

    def _set(self, var: int, mask: int) -> None:
        self._trail.append((var, self.dom[var]))
        self.dom[var] = mask

    def _undo(self, mark: int) -> None:
        trail = self._trail
        dom = self.dom
        while len(trail) > mark:
            v, m = trail.pop()
            dom[v] = m

    def _revise_table(self, cid: int, queue: list[int], queued: set[int]) -> bool:
        scope, tuples = self._tables[cid]
        dom = self.dom
        masks = [dom[v] for v in scope]
        seen = [0] * len(scope)
        for t in tuples:
            for i, a in enumerate(t):
                if not (masks[i] >> a) & 1:
                    break
            else:
                for i, a in enumerate(t):
                    seen[i] |= 1 << a
        for i, v in enumerate(scope):
            if seen[i] != masks[i]:
                if not seen[i]:
                    return False
                self._set(v, seen[i])
                if v not in queued:
                    queued.add(v)
                    queue.append(v)
        return True

    def _propagate(self, queue: list[int]) -> bool:
        dom = self.dom
        adj = self._adj
        tables_of = self._tables_of
        queued = set(queue)
        while queue:
            u = queue.pop()
            queued.discard(u)
            du = dom[u]
            for brel, forward, vs in adj[u]:
                sup = brel.support(du, forward)
                for v in vs:
                    dv = dom[v]
                    nd = dv & sup
                    if nd != dv:
                        if not nd:
                            return False
                        self._set(v, nd)
                        if v not in queued:
                            queued.add(v)
                            queue.append(v)
            for cid in tables_of[u]:
                if not self._revise_table(cid, queue, queued):
                    return False
        return True

    # -- search ---------------------------------------------------------

    def _next(self, start: int, stop: int) -> int:
        dom = self.dom
        for v in range(start, stop):
            d = dom[v]
            if d & (d - 1):
                return v
        return -1

    def _dfs(self, lo: int, hi: int) -> Iterator[None]:
        """Yield once per assignment of variables ``lo..hi-1`` consistent under propagation."""
        base = len(self._trail)
        try:
            first = self._next(lo, hi)
            if first < 0:
                yield
                return
            stack = [[first, self.dom[first], len(self._trail)]]
            while stack:
                top = stack[-1]
                var, rem, mark = top
                self._undo(mark)
                if not rem:
                    stack.pop()
                    continue
                low = rem & -rem
                top[1] = rem ^ low
                self.nodes += 1
                if self.node_limit is not None and self.nodes > self.node_limit:
                    raise CapExceeded(f"search node limit {self.node_limit} exceeded")
                self._set(var, low)
                if self._propagate([var]):
                    nxt = self._next(var + 1, hi)
                    if nxt < 0:
                        yield
                    else:
                        stack.append([nxt, self.dom[nxt], len(self._trail)])
        finally:
            self._undo(base)

    def _start(self) -> bool:
        self._build()
        if self._failed or not all(self.dom):
            return False
        return self._propagate(list(range(self.nvars)))

    def solutions(self) -> Iterator[tuple[int, ...]]:
        """All solutions in lexicographic order."""
        mark = len(self._trail)
        try:
            if not self._start():
                return
            for _ in self._dfs(0, self.nvars):
                yield tuple(single_value(d) for d in self.dom)
        finally:
            self._undo(mark)

    def first(self) -> Optional[tuple[int, ...]]:
        for sol in self.solutions():
            return sol
        return None

    def projections(self, k: int) -> Iterator[tuple[int, ...]]:
        """Distinct values of variables ``0..k-1`` over all solutions, in lexicographic order."""
        mark = len(self._trail)
        try:
            if not self._start():
                return
            for _ in self._dfs(0, k):
                head = tuple(single_value(d) for d in self.dom[:k])
                inner = self._dfs(k, self.nvars)
                found = next(inner, False) is None
                inner.close()
                if found:
                    yield head
        finally:
            self._undo(mark)
