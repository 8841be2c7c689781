"""Terms, laws and term rewriting for the distributive lattice type.

A term is a finite tree over variables ``x1, x2, ...`` and the two binary
symbols meet (``&``) and join (``|``).  Terms are immutable and hashable, so
structural equality is plain ``==``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Symbol:
    name: str
    arity: int
    token: str

    def __post_init__(self):
        if self.arity not in (0, 1, 2):
            raise ValueError(f"unsupported arity {self.arity} for {self.name}")

    def __repr__(self):
        return self.name


MEET = Symbol("meet", 2, "&")
JOIN = Symbol("join", 2, "|")
SYMBOLS = (MEET, JOIN)


@dataclass(frozen=True)
class Var:
    index: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("variable indices are 1-based")

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class Apply:
    symbol: Symbol
    children: tuple

    def __post_init__(self):
        if len(self.children) != self.symbol.arity:
            raise ValueError(
                f"{self.symbol.name} takes {self.symbol.arity} children, got {len(self.children)}"
            )

    def __str__(self):
        return format_term(self)


Term = Union[Var, Apply]


def meet(a: Term, b: Term) -> Apply:
    return Apply(MEET, (a, b))


def join(a: Term, b: Term) -> Apply:
    return Apply(JOIN, (a, b))


# --------------------------------------------------------------------------
# concrete syntax


class TermSyntaxError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


_TOKEN = re.compile(r"(?P<var>x[0-9]+)|(?P<op>[&|()])|(?P<ws>\s+)|(?P<bad>.)", re.S)


def _tokenize(text):
    tokens = []
    for m in _TOKEN.finditer(text):
        offset = len(text[: m.start()].encode("utf-8"))
        if m.lastgroup == "bad":
            raise TermSyntaxError(f"unknown token {m.group()!r}", offset)
        if m.lastgroup != "ws":
            tokens.append((m.group(), offset))
    tokens.append(("<end>", len(text.encode("utf-8"))))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i][0]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expr(self):
        node = self.conj()
        while self.peek() == "|":
            self.take()
            node = join(node, self.conj())
        return node

    def conj(self):
        node = self.atom()
        while self.peek() == "&":
            self.take()
            node = meet(node, self.atom())
        return node

    def atom(self):
        tok, offset = self.take()
        if tok == "(":
            node = self.expr()
            close, at = self.take()
            if close != ")":
                raise TermSyntaxError("expected ')'", at)
            return node
        if tok.startswith("x"):
            index = int(tok[1:])
            if index < 1:
                raise TermSyntaxError("variable index must be positive", offset)
            return Var(index)
        raise TermSyntaxError(f"unexpected {tok!r}", offset)


def parse_term(text: str) -> Term:
    """Parse ``x1 & (x2 | x3)`` style text; ``&`` binds tighter than ``|``."""
    p = _Parser(text)
    node = p.expr()
    tok, offset = p.take()
    if tok != "<end>":
        raise TermSyntaxError(f"unexpected {tok!r}", offset)
    return node


def format_term(term: Term) -> str:
    if isinstance(term, Var):
        return str(term)
    parts = []
    for child in term.children:
        s = format_term(child)
        parts.append(f"({s})" if isinstance(child, Apply) else s)
    return f" {term.symbol.token} ".join(parts)


# --------------------------------------------------------------------------
# structure


def variables(term: Term) -> set:
    if isinstance(term, Var):
        return {term.index}
    out = set()
    for c in term.children:
        out |= variables(c)
    return out


def num_nodes(term: Term) -> int:
    if isinstance(term, Var):
        return 1
    return 1 + sum(num_nodes(c) for c in term.children)


def num_applies(term: Term) -> int:
    if isinstance(term, Var):
        return 0
    return 1 + sum(num_applies(c) for c in term.children)


def leaves(term: Term) -> list:
    """Variable indices in left-to-right order (with repetition)."""
    if isinstance(term, Var):
        return [term.index]
    return [i for c in term.children for i in leaves(c)]


def subterms(term: Term) -> list:
    """Pre-order list of ``(subterm, path)``; the root has the empty path."""
    out = []
    stack = [(term, ())]
    while stack:
        t, path = stack.pop()
        out.append((t, path))
        if isinstance(t, Apply):
            for k in reversed(range(len(t.children))):
                stack.append((t.children[k], path + (k,)))
    return out


def subterm_at(term: Term, path: Sequence[int]) -> Term:
    for k in path:
        term = term.children[k]
    return term


def replace_at(term: Term, path: Sequence[int], new: Term) -> Term:
    if not path:
        return new
    k = path[0]
    children = list(term.children)
    children[k] = replace_at(children[k], path[1:], new)
    return Apply(term.symbol, tuple(children))


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Realization:
    """One function per symbol over some carrier."""

    meet: Callable
    join: Callable
    name: str = ""

    def op(self, symbol: Symbol) -> Callable:
        if symbol == MEET:
            return self.meet
        if symbol == JOIN:
            return self.join
        raise KeyError(symbol)


RIESZ = Realization(np.minimum, np.maximum, "riesz")
BOOLEAN = Realization(np.logical_and, np.logical_or, "boolean")


class MissingArgument(LookupError):
    pass


def _lookup(args, index):
    if isinstance(args, Mapping):
        if index not in args:
            raise MissingArgument(f"no argument for x{index}")
        return args[index]
    if index > len(args):
        raise MissingArgument(f"no argument for x{index} ({len(args)} given)")
    return args[index - 1]


def eval_term(term: Term, realization: Realization, args):
    """Evaluate the term function bottom-up.

    ``args`` is either a sequence (``args[0]`` is ``x1``) or a mapping from
    1-based variable index to carrier value.
    """
    if isinstance(term, Var):
        return _lookup(args, term.index)
    f = realization.op(term.symbol)
    return f(*(eval_term(c, realization, args) for c in term.children))


# --------------------------------------------------------------------------
# random terms


def random_term(num_symbols: int, rng: np.random.Generator) -> Term:
    if num_symbols < 1:
        raise ValueError("num_symbols must be >= 1")
    pool = [Var(i) for i in range(1, num_symbols + 1)]
    while len(pool) > 1:
        first = pool.pop(int(rng.integers(len(pool))))
        second = pool.pop(int(rng.integers(len(pool))))
        sym = SYMBOLS[int(rng.integers(2))]
        pool.append(Apply(sym, (first, second)))
    return pool[0]


# --------------------------------------------------------------------------
# laws


@dataclass(frozen=True)
class Law:
    name: str
    lhs: Term
    rhs: Term

    def __str__(self):
        return f"{format_term(self.lhs)} = {format_term(self.rhs)}"


def _law(name, text):
    lhs, rhs = text.split("=")
    return Law(name, parse_term(lhs), parse_term(rhs))


# x, y, z are x1, x2, x3; starred laws are the meet/join duals
LAWS = (
    _law("commutativity", "x1 & x2 = x2 & x1"),
    _law("commutativity*", "x1 | x2 = x2 | x1"),
    _law("associativity", "x1 & (x2 & x3) = (x1 & x2) & x3"),
    _law("associativity*", "x1 | (x2 | x3) = (x1 | x2) | x3"),
    _law("absorption", "x1 | (x1 & x2) = x1"),
    _law("absorption*", "x1 & (x1 | x2) = x1"),
    _law("distributivity", "x1 | (x2 & x3) = (x1 | x2) & (x1 | x3)"),
    _law("distributivity*", "x1 & (x2 | x3) = (x1 & x2) | (x1 & x3)"),
)
LAW_NAMES = tuple(law.name for law in LAWS)
LAWS_BY_NAME = {law.name: law for law in LAWS}

FAMILIES = {
    name: (LAWS_BY_NAME[name], LAWS_BY_NAME[name + "*"])
    for name in ("associativity", "commutativity", "absorption", "distributivity")
}


def match(pattern: Term, term: Term, binding: dict | None = None) -> dict | None:
    """Bind pattern variables to subterms; repeated variables must agree structurally."""
    binding = {} if binding is None else binding
    if isinstance(pattern, Var):
        bound = binding.get(pattern.index)
        if bound is None:
            binding[pattern.index] = term
            return binding
        return binding if bound == term else None
    if not isinstance(term, Apply) or term.symbol != pattern.symbol:
        return None
    for p, t in zip(pattern.children, term.children):
        if match(p, t, binding) is None:
            return None
    return binding


def instantiate(pattern: Term, binding: Mapping[int, Term]) -> Term:
    if isinstance(pattern, Var):
        return binding[pattern.index]
    return Apply(pattern.symbol, tuple(instantiate(c, binding) for c in pattern.children))


def orientations(laws) -> list:
    """``(source, target)`` pattern pairs for a law or a family of laws."""
    if isinstance(laws, Law):
        laws = (laws,)
    return [o for law in laws for o in ((law.lhs, law.rhs), (law.rhs, law.lhs))]


def rewrite_options(laws, term: Term, fill: Sequence[Term] | None = None) -> list:
    """Matching orientations as ``(source, target, binding)``.

    An orientation whose target mentions a variable the source does not bind
    (absorption read right-to-left) is only usable when ``fill`` supplies
    candidate terms for that variable.
    """
    options = []
    for src, dst in orientations(laws):
        b = match(src, term)
        if b is None:
            continue
        if not variables(dst) <= b.keys() and not fill:
            continue
        options.append((src, dst, b))
    return options


def rewrite(term: Term, source: Term, target: Term, extra: Mapping[int, Term] | None = None):
    """Rewrite ``term`` matched against ``source`` into ``target``; ``None`` if no match."""
    b = match(source, term)
    if b is None:
        return None
    if extra:
        b = {**extra, **b}
    return instantiate(target, b)


def apply_law(laws, term: Term, rng: np.random.Generator, fill: Sequence[Term] | None = None):
    """Apply one law (or family) at the root of ``term``.

    Picks uniformly among matching orientations; returns ``None`` when none
    match.  Unbound target variables are drawn uniformly from ``fill``.
    """
    options = rewrite_options(laws, term, fill)
    if not options:
        return None
    _, dst, b = options[int(rng.integers(len(options)))]
    b = dict(b)
    for v in sorted(variables(dst) - b.keys()):
        b[v] = fill[int(rng.integers(len(fill)))]
    return instantiate(dst, b)


def equivalent_term(p: Term, num_applications: int, rng: np.random.Generator) -> Term:
    """Random chain of ``num_applications`` law rewrites starting at ``p``.

    Each pass shuffles the subterm positions and the four law families and
    performs the first rewrite that applies.  Variables introduced by
    expanding absorption are drawn from the variables of the current term.
    """
    if num_applications < 0:
        raise ValueError("num_applications must be >= 0")
    families = list(FAMILIES.values())
    for _ in range(num_applications):
        subs = subterms(p)
        fill = [Var(i) for i in sorted(variables(p))]
        sub_order = rng.permutation(len(subs))
        law_order = rng.permutation(len(families))
        done = False
        for j in law_order:
            for k in sub_order:
                sub, path = subs[k]
                q = apply_law(families[j], sub, rng, fill)
                if q is not None:
                    p = replace_at(p, path, q)
                    done = True
                    break
            if done:
                break
    return p


def iter_terms(num_symbols: int) -> Iterator[Term]:
    """All terms using each of ``x1..xn`` exactly once (small n only)."""

    def build(idx):
        if len(idx) == 1:
            yield Var(idx[0])
            return
        n = len(idx)
        for mask in range(1, 2 ** n - 1):
            left = tuple(idx[i] for i in range(n) if mask >> i & 1)
            right = tuple(idx[i] for i in range(n) if not mask >> i & 1)
            for a in build(left):
                for b in build(right):
                    for sym in SYMBOLS:
                        yield Apply(sym, (a, b))

    yield from build(tuple(range(1, num_symbols + 1)))
