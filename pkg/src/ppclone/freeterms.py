"""Terms over abstract signatures, one-step equational rewriting, and
satisfiability of identity systems by projections."""

from __future__ import annotations

import itertools
import random
import re
from dataclasses import dataclass
from typing import Mapping, Optional, Union

# symbols of the four-operation example: p, q unary, r, s binary
HOUSE_SIGNATURE = {"p": 1, "q": 1, "r": 2, "s": 2}
PROJECTION_ARITY_CAP = 8


@dataclass(frozen=True)
class Var:
    index: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("variable indices start at 1")

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class App:
    symbol: str
    args: tuple["Term", ...]

    def __str__(self):
        return f"{self.symbol}({','.join(map(str, self.args))})"


Term = Union[Var, App]


def app(symbol: str, *args: Term) -> App:
    return App(symbol, tuple(args))


def variables(t: Term) -> set[int]:
    if isinstance(t, Var):
        return {t.index}
    out: set[int] = set()
    for a in t.args:
        out |= variables(a)
    return out


def symbols(t: Term) -> dict[str, int]:
    if isinstance(t, Var):
        return {}
    out = {t.symbol: len(t.args)}
    for a in t.args:
        for k, v in symbols(a).items():
            if out.setdefault(k, v) != v:
                raise ValueError(f"symbol {k} used with arities {out[k]} and {v}")
    return out


def check_signature(t: Term, signature: Mapping[str, int]) -> None:
    for name, arity in symbols(t).items():
        if name not in signature:
            raise ValueError(f"unknown symbol {name!r}")
        if signature[name] != arity:
            raise ValueError(f"{name} has arity {signature[name]}, used with {arity}")


def substitute(t: Term, sub: Mapping[int, Term]) -> Term:
    if isinstance(t, Var):
        return sub.get(t.index, t)
    return App(t.symbol, tuple(substitute(a, sub) for a in t.args))


def depth(t: Term) -> int:
    return 0 if isinstance(t, Var) else 1 + max(depth(a) for a in t.args)


# -- parsing ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z_0-9']*)|(?P<punct>[(),]))")
_LETTERS = {"x": 1, "y": 2, "z": 3, "u": 4, "v": 5, "w": 6}


class TermSyntaxError(ValueError):
    pass


def parse_term(text: str, letter_vars: Optional[Mapping[str, int]] = None) -> Term:
    """Prefix notation: ``q(r(x1,x2))``.  Variables are ``x<i>`` or single letters x, y, z, u, v, w."""
    letter_vars = _LETTERS if letter_vars is None else letter_vars
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise TermSyntaxError(f"column {pos + 1}: unexpected {text[pos]!r}")
        tokens.append((m.group("name") or m.group("punct"), m.start(m.lastindex)))
        pos = m.end()
    i = 0

    def peek():
        return tokens[i][0] if i < len(tokens) else None

    def expect(tok):
        nonlocal i
        if peek() != tok:
            where = tokens[i][1] + 1 if i < len(tokens) else len(text) + 1
            raise TermSyntaxError(f"column {where}: expected {tok!r}")
        i += 1

    def term() -> Term:
        nonlocal i
        if i >= len(tokens):
            raise TermSyntaxError(f"column {len(text) + 1}: unexpected end of term")
        name, col = tokens[i]
        if name in "(),":
            raise TermSyntaxError(f"column {col + 1}: unexpected {name!r}")
        i += 1
        if peek() == "(":
            i += 1
            args = [term()]
            while peek() == ",":
                i += 1
                args.append(term())
            expect(")")
            return App(name, tuple(args))
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            return Var(int(m.group(1)))
        if name in letter_vars:
            return Var(letter_vars[name])
        raise TermSyntaxError(f"column {col + 1}: {name!r} is neither a variable nor applied")

    t = term()
    if i != len(tokens):
        raise TermSyntaxError(f"column {tokens[i][1] + 1}: trailing input")
    return t


@dataclass(frozen=True)
class IdentitySystem:
    identities: tuple[tuple[Term, Term], ...]

    @classmethod
    def parse(cls, text: str) -> "IdentitySystem":
        """One ``lhs ≈ rhs`` per line (``~=`` accepted); blank lines and ``#`` comments skipped."""
        out = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = re.split(r"≈|~=", line)
            if len(parts) != 2:
                raise TermSyntaxError(f"line {lineno}: expected exactly one '≈' or '~='")
            try:
                out.append((parse_term(parts[0]), parse_term(parts[1])))
            except TermSyntaxError as exc:
                raise TermSyntaxError(f"line {lineno}: {exc}") from None
        sys = cls(tuple(out))
        sys.signature()
        return sys

    def signature(self) -> dict[str, int]:
        sig: dict[str, int] = {}
        for l, r in self.identities:
            for t in (l, r):
                for k, v in symbols(t).items():
                    if sig.setdefault(k, v) != v:
                        raise ValueError(f"symbol {k} used with arities {sig[k]} and {v}")
        return sig

    def __str__(self):
        return "\n".join(f"{l} ≈ {r}" for l, r in self.identities)


def house_identities() -> IdentitySystem:
    """p r(x,y) ≈ p s(x,y) and q r(x,y) ≈ q s(y,x)."""
    return IdentitySystem.parse("p(r(x,y)) ≈ p(s(x,y))\nq(r(x,y)) ≈ q(s(y,x))")


def stripped_siggers() -> IdentitySystem:
    return IdentitySystem.parse("s(x,y,x,z,y,z) ≈ s(y,x,z,x,z,y)")


# -- the leftmost-variable invariant ------------------------------------------------------

def theta(t: Term, swapped: bool = False) -> int:
    """Index of the variable an element of the house clone projects to.

    theta(x_i) = i, theta(q r(z1,z2)) = theta(z2), otherwise theta of the
    first argument.  With ``swapped`` the roles of r and s are exchanged,
    which is the right reading for terms whose outermost symbol is r.
    """
    r_sym = "s" if swapped else "r"
    while True:
        if isinstance(t, Var):
            return t.index
        if t.symbol not in HOUSE_SIGNATURE:
            raise ValueError(f"unknown symbol {t.symbol!r}")
        if t.symbol == "q" and isinstance(t.args[0], App) and t.args[0].symbol == r_sym:
            t = t.args[0].args[1]
        else:
            t = t.args[0]


def theta_for(t: Term) -> int:
    """theta with the variant chosen by the outermost symbol."""
    return theta(t, swapped=isinstance(t, App) and t.symbol == "r")


# -- rewriting ---------------------------------------------------------------------------

def _match(pattern: Term, t: Term, sub: dict) -> bool:
    if isinstance(pattern, Var):
        bound = sub.get(pattern.index)
        if bound is None:
            sub[pattern.index] = t
            return True
        return bound == t
    if not isinstance(t, App) or t.symbol != pattern.symbol or len(t.args) != len(pattern.args):
        return False
    return all(_match(p, a, sub) for p, a in zip(pattern.args, t.args))


def _positions(t: Term, path=()):
    yield path, t
    if isinstance(t, App):
        for i, a in enumerate(t.args):
            yield from _positions(a, path + (i,))


def _replace(t: Term, path: tuple, new: Term) -> Term:
    if not path:
        return new
    assert isinstance(t, App)
    i = path[0]
    return App(t.symbol, t.args[:i] + (_replace(t.args[i], path[1:], new),) + t.args[i + 1:])


def redexes(t: Term, rules: IdentitySystem):
    """(path, rewritten subterm) for every rule applied in either direction at every position."""
    for path, sub in _positions(t):
        for l, r in rules.identities:
            for src, dst in ((l, r), (r, l)):
                m: dict = {}
                if _match(src, sub, m) and variables(dst) <= set(m):
                    yield path, substitute(dst, m)


def rewrite_step(t: Term, rules: IdentitySystem) -> set:
    """All terms other than ``t`` reachable by one rule application at one position."""
    return {_replace(t, path, new) for path, new in redexes(t, rules)} - {t}


def reachable(t: Term, rules: IdentitySystem, steps: int) -> set:
    seen = {t}
    frontier = {t}
    for _ in range(steps):
        nxt = set()
        for u in frontier:
            nxt |= rewrite_step(u, rules) - seen
        seen |= nxt
        frontier = nxt
    return seen


def random_term(rng: random.Random, signature: Mapping[str, int] = HOUSE_SIGNATURE, max_depth: int = 4,
                nvars: int = 3) -> Term:
    if max_depth == 0 or rng.random() < 0.25:
        return Var(rng.randint(1, nvars))
    sym = rng.choice(sorted(signature))
    return App(sym, tuple(random_term(rng, signature, max_depth - 1, nvars) for _ in range(signature[sym])))


# -- projections -------------------------------------------------------------------------------

def eval_projections(t: Term, coord: Mapping[str, int]) -> int:
    """Variable index obtained when each symbol is the projection onto ``coord[symbol]``."""
    while isinstance(t, App):
        t = t.args[coord[t.symbol]]
    return t.index


def projection_satisfiable(sys: IdentitySystem,
                           arity_cap: int = PROJECTION_ARITY_CAP) -> Optional[dict[str, int]]:
    """Least (in symbol order) coordinate assignment satisfying every identity, or None."""
    sig = sys.signature()
    if any(k > arity_cap for k in sig.values()):
        raise ValueError(f"arity above cap {arity_cap}")
    names = sorted(sig)
    for combo in itertools.product(*[range(sig[s]) for s in names]):
        coord = dict(zip(names, combo))
        if all(eval_projections(l, coord) == eval_projections(r, coord) for l, r in sys.identities):
            return coord
    return None


def holds_in_two_element_projections(sys: IdentitySystem, coord: Mapping[str, int]) -> bool:
    """Evaluate both sides as functions on {0,1} and compare on every variable assignment."""
    vs = sorted(set().union(*[variables(l) | variables(r) for l, r in sys.identities]) or {1})

    def ev(t: Term, env: Mapping[int, int]) -> int:
        if isinstance(t, Var):
            return env[t.index]
        return [ev(a, env) for a in t.args][coord[t.symbol]]

    for bitsv in itertools.product((0, 1), repeat=len(vs)):
        env = dict(zip(vs, bitsv))
        if any(ev(l, env) != ev(r, env) for l, r in sys.identities):
            return False
    return True


def theta_invariance_check(seed: int, trials: int = 1000, max_depth: int = 4) -> tuple[int, int]:
    """Random single rewrite steps under the house identities; returns (steps checked, violations).

    Only terms whose outermost symbol is not r on both sides are compared,
    since theta reads those terms without the swap.
    """
    rng = random.Random(seed)
    rules = house_identities()
    checked = violations = 0
    while checked < trials:
        t = random_term(rng, max_depth=max_depth)
        steps = sorted(rewrite_step(t, rules), key=str)
        if not steps:
            continue
        u = rng.choice(steps)
        if any(isinstance(w, App) and w.symbol == "r" for w in (t, u)):
            continue
        checked += 1
        if theta(t) != theta(u):
            violations += 1
    return checked, violations
