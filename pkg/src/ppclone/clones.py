"""Operation tables, identity-constrained polymorphism search, clone fragments
and homomorphisms to the clone of projections on two elements."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .csp import CapExceeded, Problem
from .relstruct import FiniteStructure, core_of, endomorphisms, is_core, one_in_three_structure

DEFAULT_CELL_CAP = 50_000
DEFAULT_CONSTRAINT_CAP = 6_000_000
DEFAULT_NODE_LIMIT = 2_000_000


@lru_cache(maxsize=None)
def _grid(n: int, k: int) -> np.ndarray:
    """All k-tuples over ``0..n-1`` in base-n order, shape ``(n**k, k)``."""
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(n), repeat=k)), dtype=np.int64).reshape(-1, k)


@lru_cache(maxsize=None)
def _weights(n: int, k: int) -> np.ndarray:
    return n ** np.arange(k - 1, -1, -1, dtype=np.int64)


def cell_index(n: int, args: Sequence[int]) -> int:
    x = 0
    for a in args:
        x = x * n + a
    return x


@dataclass(frozen=True)
class OperationTable:
    n: int
    arity: int
    values: tuple[int, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.values) != self.n ** self.arity:
            raise ValueError(f"table of length {len(self.values)} for arity {self.arity} on {self.n} elements")
        if any(not 0 <= v < self.n for v in self.values):
            raise ValueError("table value out of range")

    @classmethod
    def from_array(cls, n: int, arity: int, values) -> "OperationTable":
        return cls(n, arity, tuple(int(v) for v in values))

    @classmethod
    def from_function(cls, n: int, arity: int, fn) -> "OperationTable":
        return cls(n, arity, tuple(int(fn(*t)) for t in itertools.product(range(n), repeat=arity)))

    @classmethod
    def projection(cls, n: int, arity: int, i: int) -> "OperationTable":
        return cls.from_array(n, arity, _grid(n, arity)[:, i])

    @classmethod
    def constant(cls, n: int, arity: int, c: int) -> "OperationTable":
        return cls(n, arity, (c,) * n ** arity)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int64)

    def __call__(self, *args: int) -> int:
        return self.values[cell_index(self.n, args)]

    def minor(self, sigma: Sequence[int], k: int) -> "OperationTable":
        """g(x_0..x_{k-1}) = f(x_sigma[0], ..., x_sigma[m-1])."""
        idx = _grid(self.n, k)[:, list(sigma)] @ _weights(self.n, self.arity) if self.arity else \
            np.zeros(self.n ** k, dtype=np.int64)
        return OperationTable.from_array(self.n, k, self.array[idx])

    def after(self, u: "OperationTable") -> "OperationTable":
        """u o f."""
        return OperationTable.from_array(self.n, self.arity, u.array[self.array])

    def inner(self, j: int, u: "OperationTable") -> "OperationTable":
        """f(x_0, .., u(x_j), .., x_{m-1})."""
        g = _grid(self.n, self.arity).copy()
        g[:, j] = u.array[g[:, j]]
        return OperationTable.from_array(self.n, self.arity, self.array[g @ _weights(self.n, self.arity)])

    def partial_compose(self, j: int, g: "OperationTable") -> "OperationTable":
        """f(x_0..x_{j-1}, g(x_j..x_{j+l-1}), x_{j+l}..); arity m + l - 1."""
        m, l, n = self.arity, g.arity, self.n
        k = m + l - 1
        grid = _grid(n, k)
        inner_val = g.array[grid[:, j:j + l] @ _weights(n, l)]
        args = np.concatenate([grid[:, :j], inner_val[:, None], grid[:, j + l:]], axis=1)
        return OperationTable.from_array(n, k, self.array[args @ _weights(n, m)])

    def diagonal(self) -> "OperationTable":
        return self.minor([0] * self.arity, 1)

    def is_projection(self) -> Optional[int]:
        for i in range(self.arity):
            if self == OperationTable.projection(self.n, self.arity, i):
                return i
        return None

    def to_json(self) -> dict:
        return {"domain": self.n, "arity": self.arity, "values": list(self.values)}

    @classmethod
    def from_json(cls, data) -> "OperationTable":
        k = data["arity"]
        vals = data["values"]
        n = data.get("domain")
        if n is None:
            n = round(len(vals) ** (1.0 / k)) if k else max(vals) + 1
        return cls(n, k, tuple(vals))


# -- identities -----------------------------------------------------------------

@dataclass(frozen=True)
class Identity:
    """Height-one identity f(lhs) = f(rhs) over variables ``0..nvars-1``."""

    lhs: tuple[int, ...]
    rhs: tuple[int, ...]
    nvars: int

    def __str__(self):
        names = "xyzuvw" if self.nvars <= 6 else None
        show = (lambda v: names[v]) if names else (lambda v: f"x{v + 1}")
        return f"t({','.join(map(show, self.lhs))}) = t({','.join(map(show, self.rhs))})"

    def cells(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        g = _grid(n, self.nvars)
        w = _weights(n, len(self.lhs))
        return g[:, list(self.lhs)] @ w, g[:, list(self.rhs)] @ w

    def holds(self, op: OperationTable) -> bool:
        l, r = self.cells(op.n)
        a = op.array
        return bool(np.array_equal(a[l], a[r]))


SIGGERS6 = (Identity((0, 1, 0, 2, 1, 2), (1, 0, 2, 0, 2, 1), 3),)
SIGGERS4 = (Identity((1, 0, 2, 1), (0, 1, 0, 2), 3),)


def wnu_identities(k: int) -> tuple[Identity, ...]:
    def pat(i):
        return tuple(1 if j == i else 0 for j in range(k))
    ids = [Identity(pat(i), pat(i + 1), 2) for i in range(k - 1)]
    return tuple(ids)


def cyclic_identities(k: int) -> tuple[Identity, ...]:
    if k == 1:
        return ()
    return (Identity(tuple(range(k)), tuple(range(1, k)) + (0,), k),)


def kind_identities(kind: str, arity: int) -> tuple[Identity, ...]:
    if kind == "siggers6":
        return SIGGERS6
    if kind == "siggers4":
        return SIGGERS4
    if kind == "wnu":
        return wnu_identities(arity)
    if kind == "cyclic":
        return cyclic_identities(arity)
    raise ValueError(f"no fixed identity system for kind {kind!r}")


# -- polymorphism search -------------------------------------------------------

def is_polymorphism(a: FiniteStructure, op: OperationTable) -> bool:
    """Pointwise check over all choices of k tuples from every relation."""
    n, k = a.domain_size, op.arity
    vals = op.array
    for name, arity, tuples in a.items():
        if not tuples:
            continue
        arr = np.array(tuples, dtype=np.int64)
        codes = np.sort(arr @ _weights(n, arity))
        # split over the first argument to bound memory
        for first in range(len(arr)):
            acc = arr[first][None, :].copy()
            for _ in range(k - 1):
                acc = (acc[:, None, :] * n + arr[None, :, :]).reshape(-1, arity)
            img = vals[acc] @ _weights(n, arity)
            pos = np.searchsorted(codes, img)
            pos[pos >= len(codes)] = 0
            if not np.all(codes[pos] == img):
                return False
    return True


def _merge_cells(n: int, k: int, identities: Sequence[Identity]) -> tuple[np.ndarray, int]:
    """Map each cell to a variable so that cells forced equal share one; variables ordered by least cell."""
    size = n ** k
    if not identities:
        return np.arange(size, dtype=np.int64), size
    ls, rs = [], []
    for ident in identities:
        if len(ident.lhs) != k or len(ident.rhs) != k:
            raise ValueError(f"identity {ident} does not have arity {k}")
        l, r = ident.cells(n)
        ls.append(l)
        rs.append(r)
    l = np.concatenate(ls)
    r = np.concatenate(rs)
    g = coo_matrix((np.ones(len(l)), (l, r)), shape=(size, size))
    ncomp, labels = connected_components(g, directed=False)
    least = np.full(ncomp, size, dtype=np.int64)
    np.minimum.at(least, labels, np.arange(size))
    order = np.argsort(least, kind="stable")
    rank = np.empty(ncomp, dtype=np.int64)
    rank[order] = np.arange(ncomp)
    return rank[labels], ncomp


def polymorphism_problem(a: FiniteStructure, k: int, identities: Sequence[Identity] = (),
                         stabilize: Iterable[int] = (), node_limit: Optional[int] = DEFAULT_NODE_LIMIT,
                         cell_cap: int = DEFAULT_CELL_CAP, constraint_cap: int = DEFAULT_CONSTRAINT_CAP):
    """Constraint network whose solutions are the k-ary polymorphisms meeting the constraints.

    Returns ``(problem, var_of_cell)``; a solution ``sol`` gives the table ``sol[var_of_cell]``.
    """
    n = a.domain_size
    size = n ** k
    if size > cell_cap:
        raise CapExceeded(f"{n}^{k} table cells exceed cap {cell_cap}")
    load = sum(len(t) ** k for _, arity, t in a.items() if len(t) < n ** arity)
    if load > constraint_cap:
        raise CapExceeded(f"{load} relation constraints exceed cap {constraint_cap}")
    var_of_cell, nv = _merge_cells(n, k, identities)
    p = Problem(nv, n, node_limit)
    for name, arity, tuples in a.items():
        if not tuples or len(tuples) == n ** arity:
            continue
        arr = np.array(tuples, dtype=np.int64)
        acc = np.zeros((1, arity), dtype=np.int64)
        for _ in range(k):
            acc = (acc[:, None, :] * n + arr[None, :, :]).reshape(-1, arity)
        p.add(p.relation(tuples), var_of_cell[acc])
    diag = sum(n ** i for i in range(k))
    for c in stabilize:
        p.fix(int(var_of_cell[c * diag]), c)
    return p, var_of_cell


def polymorphisms(a: FiniteStructure, arity: int, identity: Sequence[Identity] = (),
                  stabilize: Optional[Iterable[int]] = None, **caps) -> Iterator[OperationTable]:
    """Stream the polymorphisms of the given arity in lexicographic table order."""
    p, var_of_cell = polymorphism_problem(a, arity, tuple(identity or ()), stabilize or (), **caps)
    for sol in p.solutions():
        yield OperationTable.from_array(a.domain_size, arity, np.asarray(sol)[var_of_cell])


# -- witnesses --------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityWitness:
    kind: str
    operations: tuple[OperationTable, ...]
    identities: tuple[Identity, ...] = ()

    def verify(self, a: Optional[FiniteStructure] = None, constants: Iterable[int] = ()) -> bool:
        """Pointwise re-check, independent of how the witness was found."""
        ops = self.operations
        if a is not None and not all(is_polymorphism(a, op) for op in ops):
            return False
        main = ops[0]
        for c in constants:
            if any(op(*([c] * op.arity)) != c for op in ops):
                return False
        if self.kind == "pseudo_siggers":
            s, alpha, beta = ops
            l, r = SIGGERS6[0].cells(s.n)
            sv = s.array
            return s.arity == 6 and bool(np.array_equal(alpha.array[sv[l]], beta.array[sv[r]]))
        if self.kind == "taylor":
            covered = set()
            for ident in self.identities:
                if ident.nvars != 2 or not ident.holds(main):
                    return False
                covered |= {i for i in range(main.arity) if ident.lhs[i] == 0 and ident.rhs[i] == 1}
            return covered == set(range(main.arity))
        return all(ident.holds(main) for ident in kind_identities(self.kind, main.arity))

    def to_json(self) -> dict:
        out = {"kind": self.kind, "operations": [op.to_json() for op in self.operations]}
        if self.identities:
            out["identities"] = [[list(i.lhs), list(i.rhs), i.nvars] for i in self.identities]
        return out

    @classmethod
    def from_json(cls, data) -> "IdentityWitness":
        ids = tuple(Identity(tuple(l), tuple(r), v) for l, r, v in data.get("identities", []))
        return cls(data["kind"], tuple(OperationTable.from_json(o) for o in data["operations"]), ids)


def _find(a, kind, arity, constants, **caps) -> Optional[IdentityWitness]:
    for op in polymorphisms(a, arity, kind_identities(kind, arity), constants, **caps):
        w = IdentityWitness(kind, (op,))
        assert w.verify(a, constants or ())
        return w
    return None


def find_siggers6(a: FiniteStructure, constants: Optional[Iterable[int]] = None, **caps):
    return _find(a, "siggers6", 6, constants, **caps)


def find_siggers4(a: FiniteStructure, constants: Optional[Iterable[int]] = None, **caps):
    return _find(a, "siggers4", 4, constants, **caps)


def find_wnu(a: FiniteStructure, k: int, constants: Optional[Iterable[int]] = None, **caps):
    return _find(a, "wnu", k, constants, **caps)


def find_cyclic(a: FiniteStructure, k: int, constants: Optional[Iterable[int]] = None, **caps):
    return _find(a, "cyclic", k, constants, **caps)


def _pseudo_pair_search(a, alpha, beta, **caps) -> Optional[OperationTable]:
    n = a.domain_size
    p, var_of_cell = polymorphism_problem(a, 6, (), (), **caps)
    l, r = SIGGERS6[0].cells(n)
    rel = [(u, v) for u in range(n) for v in range(n) if alpha[u] == beta[v]]
    if not rel:
        return None
    p.add(p.relation(rel), np.stack([var_of_cell[l], var_of_cell[r]], axis=1))
    sol = p.first()
    if sol is None:
        return None
    return OperationTable.from_array(n, 6, np.asarray(sol)[var_of_cell])


def find_pseudo_siggers(a: FiniteStructure, method: str = "auto", **caps) -> Optional[IdentityWitness]:
    """Search for (s, alpha, beta) with alpha s(x,y,x,z,y,z) = beta s(y,x,z,x,z,y).

    ``method="pairs"`` runs one constrained 6-ary search per pair of
    endomorphisms.  ``method="auto"`` passes to the core, looks for a 4-ary
    Siggers operation fixing every element there, and lifts it back; this
    is exact because a pseudo-Siggers witness on a finite core can be
    moved into the idempotent part of the clone.
    """
    n = a.domain_size
    if method == "pairs":
        ends = endomorphisms(a)
        for alpha in ends:
            for beta in ends:
                s = _pseudo_pair_search(a, alpha, beta, **caps)
                if s is not None:
                    w = IdentityWitness("pseudo_siggers", (
                        s, OperationTable(n, 1, tuple(alpha)), OperationTable(n, 1, tuple(beta))))
                    assert w.verify(a)
                    return w
        return None
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    core, retraction, verts = core_of(a)
    t = find_siggers4(core, constants=range(core.domain_size), **caps)
    if t is None:
        return None
    t = t.operations[0]
    embed = np.asarray(verts, dtype=np.int64)
    ret = np.searchsorted(embed, np.asarray(retraction, dtype=np.int64))
    grid = _grid(n, 6)
    inner = ret[grid]
    # s(x1..x6) = t(x2, x1, x4, x5) on the core, conjugated by the retraction
    vals = embed[t.array[inner[:, [1, 0, 3, 4]] @ _weights(core.domain_size, 4)]]
    s = OperationTable.from_array(n, 6, vals)
    ident = OperationTable.projection(n, 1, 0)
    w = IdentityWitness("pseudo_siggers", (s, ident, ident))
    assert w.verify(a)
    return w


def stabilize_pseudo_siggers(a: FiniteStructure, s: OperationTable, alpha: OperationTable,
                             beta: OperationTable, constants: Iterable[int]):
    """Move a pseudo-Siggers witness of a core into the stabilizer of ``constants``.

    On a finite core the endomorphisms gamma(x) = s(x,..,x) and delta = alpha gamma
    are automorphisms, so they serve directly as the automorphisms agreeing
    with them on the constants.
    """
    if not is_core(a):
        raise ValueError("structure is not a core")
    w = IdentityWitness("pseudo_siggers", (s, alpha, beta))
    if not w.verify(a):
        raise ValueError("input is not a verified pseudo-Siggers witness")
    n = a.domain_size
    gamma = s.diagonal().array
    delta = alpha.array[gamma]
    eps_inv = np.empty(n, dtype=np.int64)
    eps_inv[gamma] = np.arange(n)
    theta_inv = np.empty(n, dtype=np.int64)
    theta_inv[delta] = np.arange(n)
    s2 = OperationTable.from_array(n, s.arity, eps_inv[s.array])
    a2 = OperationTable.from_array(n, 1, theta_inv[alpha.array[gamma]])
    b2 = OperationTable.from_array(n, 1, theta_inv[beta.array[gamma]])
    out = IdentityWitness("pseudo_siggers", (s2, a2, b2))
    assert out.verify(a, constants)
    return s2, a2, b2


# -- Taylor operations ------------------------------------------------------------------

def _nu_pattern(m: int) -> tuple[Identity, ...]:
    # t(x,..,y at i,..,x) = t(x,..,x): x/y at i, one shared variable elsewhere
    return tuple(Identity(tuple(1 if j == i else 0 for j in range(m)), (0,) * m, 2)
                 for i in range(m))


def taylor_identities(op: OperationTable) -> Optional[tuple[Identity, ...]]:
    """Per-coordinate two-variable identities of ``op``, read off its binary minors."""
    m = op.arity
    classes: dict[tuple, list[tuple[int, ...]]] = {}
    for pat in itertools.product((0, 1), repeat=m):
        classes.setdefault(op.minor(pat, 2).values, []).append(pat)
    found = []
    for i in range(m):
        hit = None
        for pats in classes.values():
            xs = [p for p in pats if p[i] == 0]
            ys = [p for p in pats if p[i] == 1]
            if xs and ys:
                hit = Identity(xs[0], ys[0], 2)
                break
        if hit is None:
            return None
        found.append(hit)
    return tuple(found)


def find_taylor(a: FiniteStructure, constants: Optional[Iterable[int]] = None, arity_cap: int = 4,
                **caps) -> Optional[IdentityWitness]:
    """Taylor operation in the stabilizer of ``constants`` (default: every element)."""
    consts = tuple(range(a.domain_size)) if constants is None else tuple(constants)
    for m in range(1, arity_cap + 1):
        narrow = [(Identity((0,), (1,), 2),)] if m == 1 else [_nu_pattern(m), wnu_identities(m)]
        for ids in narrow:
            for op in polymorphisms(a, m, ids, consts, **caps):
                found = taylor_identities(op)
                if found is not None:
                    w = IdentityWitness("taylor", (op,), found)
                    assert w.verify(a, consts)
                    return w
                break
        for op in polymorphisms(a, m, (), consts, **caps):
            found = taylor_identities(op)
            if found is not None:
                w = IdentityWitness("taylor", (op,), found)
                assert w.verify(a, consts)
                return w
    return None


# -- clone fragments and homomorphisms to projections -------------------------------

class CloneFragment:
    """Operations of arity ``1..arity_cap`` closed under minors and the listed unaries."""

    def __init__(self, n: int, arity_cap: int, ops: Iterable[OperationTable],
                 unaries: Sequence[OperationTable] = ()):
        self.n = n
        self.arity_cap = arity_cap
        self.unaries = tuple(unaries)
        self.by_arity: dict[int, list[OperationTable]] = {k: [] for k in range(1, arity_cap + 1)}
        self._set: set = set()
        for op in ops:
            self._add(op)

    def _add(self, op: OperationTable) -> bool:
        if op in self._set:
            return False
        self._set.add(op)
        self.by_arity[op.arity].append(op)
        return True

    def __contains__(self, op: OperationTable) -> bool:
        return op in self._set

    def __len__(self) -> int:
        return len(self._set)

    def operations(self) -> list[OperationTable]:
        return [op for k in sorted(self.by_arity) for op in self.by_arity[k]]

    def minors(self, op: OperationTable) -> Iterator[tuple[tuple[int, ...], OperationTable]]:
        for k in range(1, self.arity_cap + 1):
            for sigma in itertools.product(range(k), repeat=op.arity):
                yield sigma, op.minor(sigma, k)

    @classmethod
    def generate(cls, n: int, generators: Iterable[OperationTable], unaries: Sequence[OperationTable] = (),
                 arity_cap: int = 3, size_cap: int = 20_000) -> "CloneFragment":
        frag = cls(n, arity_cap, [], unaries)
        todo = [OperationTable.projection(n, k, i) for k in range(1, arity_cap + 1) for i in range(k)]
        todo += list(generators) + list(unaries)
        while todo:
            op = todo.pop()
            if op.arity > arity_cap or not frag._add(op):
                continue
            if len(frag) > size_cap:
                raise CapExceeded(f"clone fragment exceeds {size_cap} operations")
            for _, g in frag.minors(op):
                if g not in frag:
                    todo.append(g)
            for u in unaries:
                cands = [op.after(u)] + [op.inner(j, u) for j in range(op.arity)]
                todo.extend(g for g in cands if g not in frag)
        return frag


ProjectionAssignment = dict  # OperationTable -> coordinate index


def _ternary_problem(frag: CloneFragment, mode: str):
    tern = frag.by_arity.get(3, [])
    index = {op: i for i, op in enumerate(tern)}
    p = Problem(len(tern), 3)
    for i in range(3):
        proj = OperationTable.projection(frag.n, 3, i)
        if proj in index:
            p.fix(index[proj], i)
    groups: dict[tuple, list] = {}
    for f in tern:
        for sigma in itertools.product(range(3), repeat=3):
            g = f.minor(sigma, 3)
            if g not in index:
                raise ValueError("fragment is not closed under ternary minors")
            groups.setdefault(sigma, []).append((index[f], index[g]))
    for sigma, pairs in groups.items():
        rel = [(i, sigma[i]) for i in range(3)]
        p.add(p.relation(rel), np.array(pairs))
    if mode == "full":
        eq = p.relation([(i, i) for i in range(3)])
        pairs = []
        for f in tern:
            for u in frag.unaries:
                for g in [f.after(u)] + [f.inner(j, u) for j in range(3)]:
                    if g not in index:
                        raise ValueError("fragment is not closed under the listed unaries")
                    pairs.append((index[f], index[g]))
        if pairs:
            p.add(eq, np.array(pairs))
    elif mode != "h1":
        raise ValueError(f"mode must be 'full' or 'h1', not {mode!r}")
    return p, tern


class InconsistentAssignment(ValueError):
    pass


def extend_ternary(frag: CloneFragment, xi: Mapping[OperationTable, int]) -> ProjectionAssignment:
    """Extend an assignment on ternary operations to the whole fragment.

    For k-ary f the Boolean operation a -> xi(f_a) is formed, where f_a
    identifies the arguments according to ``a``; it must preserve the
    one-in-three relation, i.e. be a projection, whose coordinate is returned.
    """
    m_rel = one_in_three_structure().rel("R")
    out: ProjectionAssignment = {}
    for f in frag.operations():
        k = f.arity
        table = {}
        for a in itertools.product((0, 1), repeat=k):
            g = f.minor(a, 3)
            if g not in xi:
                raise InconsistentAssignment(f"ternary minor of an arity-{k} operation missing from the assignment")
            v = xi[g]
            if v not in (0, 1):
                raise InconsistentAssignment("a binary minor was assigned its dummy coordinate")
            table[a] = v
        for rows in itertools.product(sorted(m_rel), repeat=k):
            col = tuple(table[tuple(r[i] for r in rows)] for i in range(3))
            if col not in m_rel:
                raise InconsistentAssignment("extension is not a projection; input did not preserve h1 identities")
        coord = next((j for j in range(k) if all(table[a] == a[j] for a in table)), None)
        if coord is None:
            raise InconsistentAssignment("extension is not a projection")
        out[f] = coord
    for f, v in xi.items():
        if out.get(f, v) != v:
            raise InconsistentAssignment("extension disagrees with the ternary assignment")
    return out


def hom_to_projections(frag: CloneFragment, mode: str = "full") -> Optional[ProjectionAssignment]:
    """An h1 (``mode='h1'``) or almost/full clone homomorphism to projections, decided on ternary operations."""
    p, tern = _ternary_problem(frag, mode)
    sol = p.first()
    if sol is None:
        return None
    return extend_ternary(frag, dict(zip(tern, sol)))


@dataclass
class HomReport:
    almost_hom: bool
    full_hom: bool
    violations: list = field(default_factory=list)
    compositions_checked: int = 0
    sampled: bool = False


def _expected_partial(xf: int, j: int, xg: int, l: int) -> int:
    if xf < j:
        return xf
    if xf == j:
        return j + xg
    return xf + l - 1


def verify_almost_hom_is_hom(frag: CloneFragment, xi: Mapping[OperationTable, int],
                             pair_cap: int = 200_000, seed: int = 0) -> HomReport:
    """Check the almost-homomorphism conditions and, separately, full composition."""
    rep = HomReport(True, True)
    ops = frag.operations()
    unaries = frag.by_arity.get(1, [])

    def bad(flag, msg):
        setattr(rep, flag, False)
        if len(rep.violations) < 20:
            rep.violations.append(msg)

    for f in ops:
        if f not in xi:
            bad("almost_hom", "operation without assignment")
            bad("full_hom", "operation without assignment")
            return rep
    for f in ops:
        pj = f.is_projection()
        if pj is not None and xi[f] != pj:
            bad("almost_hom", f"projection {pj} of arity {f.arity} sent to {xi[f]}")
        for sigma, g in frag.minors(f):
            if g in xi and xi[g] != sigma[xi[f]]:
                bad("almost_hom", f"minor {sigma} of an arity-{f.arity} operation breaks h1")
                break
        for u in unaries:
            for g in [f.after(u)] + [f.inner(j, u) for j in range(f.arity)]:
                if g in xi and xi[g] != xi[f]:
                    bad("almost_hom", "composition with a unary changes the coordinate")
                    break
    # full clone homomorphism: projections and every partial composition inside the fragment
    triples = [(f, j, g) for f in ops for j in range(f.arity) for g in ops
               if f.arity + g.arity - 1 <= frag.arity_cap]
    if len(triples) > pair_cap:
        rep.sampled = True
        triples = random.Random(seed).sample(triples, pair_cap)
    for f in ops:
        pj = f.is_projection()
        if pj is not None and xi[f] != pj:
            bad("full_hom", f"projection {pj} of arity {f.arity} sent to {xi[f]}")
    for f, j, g in triples:
        h = f.partial_compose(j, g)
        if h in xi:
            rep.compositions_checked += 1
            if xi[h] != _expected_partial(xi[f], j, xi[g], g.arity):
                bad("full_hom", f"composition at position {j} is not preserved")
    # minors are compositions with projections
    for f in ops:
        for sigma, g in frag.minors(f):
            if g in xi and xi[g] != sigma[xi[f]]:
                bad("full_hom", "composition with projections is not preserved")
                break
    return rep
