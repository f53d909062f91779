"""Connected components of a bond graph and canonical molecular formulas."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

from .errors import (
    DuplicateElementError,
    EmptyFormulaError,
    IllegalCharacterError,
    NonCanonicalError,
    ValidationError,
    ZeroCountError,
)

SYMBOL_RE = re.compile(r"[A-Z][a-z]*\Z")
_TOKEN_RE = re.compile(r"([A-Z][a-z]*)([0-9]*)")

_PERIODIC = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {sym: z for z, sym in enumerate(_PERIODIC, start=1)}


def is_element_symbol(symbol: str) -> bool:
    return isinstance(symbol, str) and SYMBOL_RE.match(symbol) is not None


@dataclass(frozen=True, order=True)
class CanonicalFormula:
    """Element/count terms in strictly increasing symbol order."""

    terms: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.terms:
            raise EmptyFormulaError("formula has no terms")
        prev = None
        for sym, n in self.terms:
            if not is_element_symbol(sym):
                raise IllegalCharacterError(f"invalid element symbol {sym!r}")
            if not isinstance(n, int) or n < 1:
                raise ZeroCountError(f"count for {sym} must be a positive integer, got {n!r}")
            if prev is not None and sym <= prev:
                raise NonCanonicalError(f"terms not in strictly increasing order at {sym}")
            prev = sym

    @cached_property
    def text(self) -> str:
        return "".join(sym if n == 1 else f"{sym}{n}" for sym, n in self.terms)

    def __str__(self):
        return self.text

    @property
    def counts(self) -> dict[str, int]:
        return dict(self.terms)

    def count(self, element: str) -> int:
        for sym, n in self.terms:
            if sym == element:
                return n
        return 0

    @property
    def n_atoms(self) -> int:
        return sum(n for _, n in self.terms)

    def atoms(self) -> list[str]:
        return [sym for sym, n in self.terms for _ in range(n)]


@lru_cache(maxsize=65536)
def _canonical_from_sorted(symbols: tuple[str, ...]) -> CanonicalFormula:
    for s in set(symbols):
        if not is_element_symbol(s):
            raise IllegalCharacterError(f"invalid element symbol {s!r}")
    counts = Counter(symbols)
    return CanonicalFormula(tuple(sorted(counts.items())))


def canonicalize(elements: Iterable[str]) -> CanonicalFormula:
    """Formula for a multiset of element symbols, order-insensitive."""
    symbols = tuple(sorted(elements))
    if not symbols:
        raise EmptyFormulaError("cannot canonicalize an empty element multiset")
    return _canonical_from_sorted(symbols)


def parse_formula(text: str, strict: bool = True) -> CanonicalFormula:
    """Parse ``(Symbol Count?)+``.

    Strict mode accepts only the canonical rendering: alphabetical symbols, no
    explicit count of 1 and no leading zeros. Lenient mode reorders and
    tolerates those spellings. Duplicate symbols and zero counts are errors in
    both modes.
    """
    if not isinstance(text, str) or text == "":
        raise EmptyFormulaError("empty formula")
    pos = 0
    terms = []
    for m in _TOKEN_RE.finditer(text):
        if m.start() != pos:
            break
        pos = m.end()
        terms.append((m.group(1), m.group(2)))
    if pos != len(text):
        raise IllegalCharacterError(f"illegal character {text[pos]!r} at position {pos} in {text!r}")

    seen = set()
    parsed = []
    for sym, digits in terms:
        if sym in seen:
            raise DuplicateElementError(f"element {sym} appears more than once in {text!r}")
        seen.add(sym)
        n = int(digits) if digits else 1
        if n == 0:
            raise ZeroCountError(f"zero count for {sym} in {text!r}")
        if strict and (digits == "1" or digits.startswith("0")):
            raise NonCanonicalError(f"non-canonical count {digits!r} for {sym} in {text!r}")
        parsed.append((sym, n))

    if strict:
        syms = [s for s, _ in parsed]
        if syms != sorted(syms):
            raise NonCanonicalError(f"elements not in canonical order in {text!r}")
    else:
        parsed.sort()
    return CanonicalFormula(tuple(parsed))


@lru_cache(maxsize=65536)
def formula_of(text: str) -> CanonicalFormula:
    """Cached lenient parse, for trusted inputs (event files, configs)."""
    return parse_formula(text, strict=False)


def composition_vector(formula: CanonicalFormula, universe: Sequence[str]) -> list[int]:
    index = {sym: i for i, sym in enumerate(universe)}
    missing = [sym for sym, _ in formula.terms if sym not in index]
    if missing:
        raise ValidationError(f"elements {missing} of {formula} not in universe {list(universe)}")
    vec = [0] * len(universe)
    for sym, n in formula.terms:
        vec[index[sym]] = n
    return vec


def nearest_formula(vector, vocabulary: Sequence[CanonicalFormula], universe: Sequence[str]) -> CanonicalFormula:
    """Vocabulary formula closest in L2 to ``vector``; ties go to the smaller rendering."""
    best = None
    best_key = None
    for f in vocabulary:
        v = composition_vector(f, universe)
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(v, vector))
        key = (d, f.text)
        if best_key is None or key < best_key:
            best, best_key = f, key
    if best is None:
        raise ValidationError("empty vocabulary")
    return best


def heaviest_element(symbols: Iterable[str]) -> str:
    """Highest atomic number; unknown symbols rank below known ones, then by name."""
    return max(symbols, key=lambda s: (ATOMIC_NUMBER.get(s, 0), s))


@dataclass(frozen=True)
class Component:
    atom_indices: tuple[int, ...]
    formula: CanonicalFormula

    @property
    def min_index(self) -> int:
        return self.atom_indices[0]


def component_sets(n_atoms: int, bonds) -> list[list[int]]:
    """Atom index lists of connected components, ordered by smallest index.

    Iterative DFS over an adjacency list; each returned list is sorted.
    """
    adj = [[] for _ in range(n_atoms)]
    for b in bonds:
        i, j = b[0], b[1]
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n_atoms
    out = []
    for start in range(n_atoms):
        if seen[start]:
            continue
        seen[start] = True
        if not adj[start]:
            out.append([start])
            continue
        stack = [start]
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comp.sort()
        out.append(comp)
    return out


def connected_components(frame) -> list[Component]:
    elements = frame.elements
    comps = []
    for idx in component_sets(len(elements), frame.bonds):
        comps.append(Component(tuple(idx), canonicalize(elements[i] for i in idx)))
    return comps

