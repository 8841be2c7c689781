"""Candidate binary operations on the mirrored space and numerical law checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import LAWS, Law, Realization, eval_term, variables

CANDIDATES = ("min", "max", "add", "sub", "hadamard", "scaled_add", "mat_prod", "cyclic_add")

# short labels used in CSV output and on the command line
SYMBOLS = {
    "min": "min",
    "max": "max",
    "add": "+",
    "sub": "-",
    "hadamard": "had",
    "scaled_add": "+s",
    "mat_prod": "xmat",
    "cyclic_add": "+c",
}


def _side(n):
    s = math.isqrt(n)
    if s * s != n:
        raise ValueError(f"dimension {n} is not a perfect square")
    return s


def sq(a):
    """Row-major reshape of the last axis into a square matrix."""
    a = np.asarray(a)
    s = _side(a.shape[-1])
    return a.reshape(a.shape[:-1] + (s, s))


def sq_inv(m):
    m = np.asarray(m)
    if m.shape[-1] != m.shape[-2]:
        raise ValueError("sq_inv expects square matrices")
    return m.reshape(m.shape[:-2] + (m.shape[-1] * m.shape[-2],))


def roll(a):
    """Element ``i`` moves to ``(i + 1) mod l``."""
    return np.roll(a, 1, axis=-1)


def apply_candidate(op: str, a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if op == "min":
        return np.minimum(a, b)
    if op == "max":
        return np.maximum(a, b)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "hadamard":
        return a * b
    if op == "scaled_add":
        return 2 * a + 2 * b
    if op == "mat_prod":
        return sq_inv(sq(a) @ sq(b))
    if op == "cyclic_add":
        return roll(a) + b
    raise KeyError(f"unknown candidate operation {op!r}")


@dataclass(frozen=True)
class MirroredPair:
    meet_op: str
    join_op: str

    def __post_init__(self):
        for op in (self.meet_op, self.join_op):
            if op not in CANDIDATES:
                raise KeyError(f"unknown candidate operation {op!r}")
        if self.meet_op == self.join_op:
            raise ValueError("meet and join must use different operations")

    @classmethod
    def parse(cls, text: str) -> "MirroredPair":
        meet, join = (s.strip() for s in text.split(","))
        return cls(meet, join)

    @property
    def label(self):
        return f"{self.meet_op},{self.join_op}"

    def realization(self) -> Realization:
        return Realization(
            lambda a, b: apply_candidate(self.meet_op, a, b),
            lambda a, b: apply_candidate(self.join_op, a, b),
            self.label,
        )


RIESZ_PAIR = MirroredPair("min", "max")

# Satisfied-law table for the 28 unordered pairs: commutativity, commutativity*,
# associativity, associativity*, absorption, absorption*, distributivity,
# distributivity*.  Row order is the canonical order for law matrices.
REFERENCE_LAW_TABLE = (
    ("max", "min", "11111111"),
    ("max", "hadamard", "11110110"),
    ("min", "add", "11110110"),
    ("max", "add", "11110010"),
    ("min", "hadamard", "11110010"),
    ("min", "scaled_add", "11100110"),
    ("add", "hadamard", "11110010"),
    ("max", "scaled_add", "11100010"),
    ("min", "mat_prod", "10110100"),
    ("add", "mat_prod", "10110010"),
    ("hadamard", "scaled_add", "11100001"),
    ("max", "sub", "10100100"),
    ("max", "mat_prod", "10110000"),
    ("max", "cyclic_add", "10100010"),
    ("min", "cyclic_add", "10100010"),
    ("add", "scaled_add", "11100000"),
    ("hadamard", "mat_prod", "10110000"),
    ("scaled_add", "mat_prod", "10010010"),
    ("min", "sub", "10100000"),
    ("add", "sub", "10100000"),
    ("add", "cyclic_add", "10100000"),
    ("sub", "hadamard", "01010000"),
    ("hadamard", "cyclic_add", "10100000"),
    ("sub", "scaled_add", "01000000"),
    ("sub", "mat_prod", "00010000"),
    ("scaled_add", "cyclic_add", "10000000"),
    ("mat_prod", "cyclic_add", "00100000"),
    ("sub", "cyclic_add", "00000000"),
)
CANONICAL_PAIRS = tuple(MirroredPair(m, j) for m, j, _ in REFERENCE_LAW_TABLE)


def reference_row(pair: MirroredPair) -> tuple:
    for m, j, bits in REFERENCE_LAW_TABLE:
        if {m, j} == {pair.meet_op, pair.join_op}:
            if (m, j) != (pair.meet_op, pair.join_op):
                # flipping the pair swaps every law with its dual
                bits = "".join(bits[i ^ 1] for i in range(8))
            return tuple(c == "1" for c in bits)
    raise KeyError(pair)


def law_count(pair: MirroredPair) -> int:
    return sum(reference_row(pair))


def check_law(
    pair: MirroredPair,
    law: Law,
    dim: int = 16,
    num_samples: int = 512,
    tol: float = 1e-9,
    rng: np.random.Generator | None = None,
    *,
    dtype=np.float64,
    elementwise: bool = False,
    atol: float = 1e-8,
) -> bool:
    """Test a law on ``num_samples`` argument tuples drawn uniformly from [0, 1].

    The default criterion is ``max|lhs - rhs| <= tol * (1 + max|lhs|)`` per
    sample.  With ``elementwise=True`` it is the ``numpy.allclose`` rule
    ``|lhs - rhs| <= atol + tol * |rhs|`` per coordinate instead.
    """
    return check_realization_law(pair.realization(), law, dim, num_samples, tol, rng,
                                 dtype=dtype, elementwise=elementwise, atol=atol)


def check_realization_law(real: Realization, law: Law, dim=16, num_samples=512, tol=1e-9, rng=None,
                          *, dtype=np.float64, elementwise=False, atol=1e-8) -> bool:
    """:func:`check_law` for any realization acting on ``(N, dim)`` arrays."""
    if num_samples < 1 or tol <= 0:
        raise ValueError("need num_samples >= 1 and tol > 0")
    rng = np.random.default_rng() if rng is None else rng
    nvars = max(variables(law.lhs) | variables(law.rhs))
    args = [rng.uniform(0.0, 1.0, (num_samples, dim)).astype(dtype) for _ in range(nvars)]
    with np.errstate(over="ignore", invalid="ignore"):
        lhs = eval_term(law.lhs, real, args)
        rhs = eval_term(law.rhs, real, args)
        if elementwise:
            return bool(np.all(np.abs(lhs - rhs) <= atol + tol * np.abs(rhs)))
        err = np.max(np.abs(lhs - rhs), axis=-1)
        return bool(np.all(err <= tol * (1.0 + np.max(np.abs(lhs), axis=-1))))


def law_row(real: Realization, dim=16, num_samples=512, tol=1e-9, seed=0, **kwargs) -> tuple:
    """Satisfied-law booleans for one realization, in law order."""
    return tuple(
        check_realization_law(real, law, dim, num_samples, tol, np.random.default_rng([seed, k]), **kwargs)
        for k, law in enumerate(LAWS)
    )


# Settings under which the reference table is reproduced exactly: single
# precision with per-coordinate relative tolerance and a wide enough latent
# (mat_prod absorption* needs sq(x) sq(y) >= sq(x), which only holds reliably
# once each dot product sums many terms).
FLOAT32_PRESET = dict(dim=256, num_samples=512, tol=1e-5, dtype=np.float32, elementwise=True, atol=1e-8)
DEFAULT_PRESET = dict(dim=16, num_samples=512, tol=1e-9, dtype=np.float64, elementwise=False)


@dataclass
class LawMatrix:
    pairs: list
    rows: list = field(default_factory=list)

    @property
    def counts(self):
        return [sum(r) for r in self.rows]

    def row(self, pair: MirroredPair) -> tuple:
        return self.rows[self.pairs.index(pair)]

    def to_csv(self) -> str:
        header = ["pair", "count", *LAW_COLUMNS]
        lines = [",".join(header)]
        for pair, row in zip(self.pairs, self.rows):
            cells = [f"{pair.meet_op}/{pair.join_op}", str(sum(row)), *("1" if b else "0" for b in row)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "LawMatrix":
        lines = [l for l in text.splitlines() if l.strip()]
        out = cls(pairs=[])
        for line in lines[1:]:
            cells = line.split(",")
            meet, join = cells[0].split("/")
            row = tuple(c == "1" for c in cells[2:])
            if int(cells[1]) != sum(row):
                raise ValueError(f"count column disagrees with row {cells[0]}")
            out.pairs.append(MirroredPair(meet, join))
            out.rows.append(row)
        return out

    def mismatches(self) -> list:
        """Rows differing from the reference table, as ``(pair, expected, got)``."""
        bad = []
        for pair, row in zip(self.pairs, self.rows):
            expected = reference_row(pair)
            if row != expected:
                bad.append((pair, expected, row))
        return bad


LAW_COLUMNS = tuple(law.name for law in LAWS)


def law_matrix(dim=16, num_samples=512, tol=1e-9, seed=0, pairs=None, **kwargs) -> LawMatrix:
    """Check every canonical pair against all eight laws.

    Each (row, law) cell draws from its own ``default_rng([seed, row, law])``
    stream so any subset of cells reproduces the full run.
    """
    pairs = list(CANONICAL_PAIRS if pairs is None else pairs)
    out = LawMatrix(pairs=pairs)
    for r, pair in enumerate(pairs):
        row = []
        for k, law in enumerate(LAWS):
            rng = np.random.default_rng([seed, r, k])
            row.append(check_law(pair, law, dim, num_samples, tol, rng, **kwargs))
        out.rows.append(tuple(row))
    return out
