import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from evomd.errors import (DuplicateElementError, EmptyFormulaError, FormulaError, IllegalCharacterError,
                          NonCanonicalError, ValidationError, ZeroCountError)
from evomd.species import (CanonicalFormula, canonicalize, component_sets, composition_vector,
                           connected_components, nearest_formula, parse_formula)
from evomd.trajectory_io import Bond, Frame


def test_canonicalize_examples():
    assert canonicalize(["Mo", "O", "S", "S"]).text == "MoOS2"
    assert canonicalize(["S", "S", "Mo", "Mo", "S", "S", "S", "S", "S"]).text == "Mo2S7"
    assert canonicalize(["H"]).text == "H"


def test_canonicalize_rejects_bad_symbol():
    with pytest.raises(ValidationError):
        canonicalize(["Mo", "s"])
    with pytest.raises(ValidationError):
        canonicalize([])


def test_parse_examples():
    assert parse_formula("MoOS2").terms == (("Mo", 1), ("O", 1), ("S", 2))
    assert parse_formula("Mo3S13").terms == (("Mo", 3), ("S", 13))


def test_strict_rejects_order_lenient_reorders():
    with pytest.raises(NonCanonicalError):
        parse_formula("SMo")
    assert parse_formula("SMo", strict=False).text == "MoS"
    assert parse_formula("S2OMo", strict=False).text == "MoOS2"


@pytest.mark.parametrize("text,exc", [
    ("", EmptyFormulaError),
    ("Mo-S", IllegalCharacterError),
    ("mo", IllegalCharacterError),
    ("MoS0", ZeroCountError),
    ("MoSS", DuplicateElementError),
    ("MoS2S", DuplicateElementError),
])
def test_parse_error_kinds(text, exc):
    for strict in (True, False):
        with pytest.raises(exc):
            parse_formula(text, strict=strict)


def test_parse_errors_are_distinct_kinds():
    kinds = set()
    for text in ("", "Mo-S", "MoS0", "MoSS"):
        with pytest.raises(FormulaError) as info:
            parse_formula(text, strict=False)
        kinds.add(info.value.kind)
    assert len(kinds) == 4


def test_strict_rejects_explicit_one_and_leading_zero():
    with pytest.raises(NonCanonicalError):
        parse_formula("Mo1S2")
    with pytest.raises(NonCanonicalError):
        parse_formula("MoS02")
    assert parse_formula("Mo1S02", strict=False).text == "MoS2"


symbols = st.sampled_from(["C", "H", "Mo", "N", "O", "S", "W", "Cl"])


@given(st.lists(symbols, min_size=1, max_size=30), st.randoms(use_true_random=False))
def test_canonicalize_order_insensitive(elements, rnd):
    shuffled = list(elements)
    rnd.shuffle(shuffled)
    assert canonicalize(elements) == canonicalize(shuffled)
    f = canonicalize(elements)
    assert Counter(f.atoms()) == Counter(elements)


@given(st.dictionaries(symbols, st.integers(1, 40), min_size=1))
def test_parse_render_identity(counts):
    f = CanonicalFormula(tuple(sorted(counts.items())))
    assert parse_formula(f.text) == f
    assert parse_formula(f.text).text == f.text
    assert canonicalize(parse_formula(f.text).atoms()) == f


def test_composition_vector():
    u = ["Mo", "O", "S"]
    assert composition_vector(parse_formula("MoOS2"), u) == [1, 1, 2]
    assert composition_vector(parse_formula("MoO3"), u) == [1, 3, 0]
    with pytest.raises(ValidationError, match="C"):
        composition_vector(parse_formula("CMo"), u)


def test_nearest_formula_round_trip_over_vocabulary():
    u = ["Mo", "O", "S"]
    vocab = [parse_formula(s) for s in ("MoO", "MoS", "MoOS2", "MoOS4", "MoS3", "MoS5", "Mo2S7", "Mo3S13",
                                        "MoO2", "MoO3", "MoS4", "MoS6", "Mo2S5", "MoOS", "MoS2")]
    for f in vocab:
        assert nearest_formula(composition_vector(f, u), vocab, u) == f


def _frame(elements, pairs):
    return Frame("t", 0, tuple(elements), [Bond(i, j, 1.0) for i, j in pairs])


def test_components_star_and_isolated():
    comps = connected_components(_frame(["Mo", "O", "S", "S"], [(0, 1), (0, 2), (0, 3)]))
    assert [c.atom_indices for c in comps] == [(0, 1, 2, 3)]
    assert comps[0].formula.text == "MoOS2"
    comps = connected_components(_frame(["Mo", "O", "S", "S"], []))
    assert [c.atom_indices for c in comps] == [(0,), (1,), (2,), (3,)]


def _union_find(n, edges):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for a in range(n):
        groups.setdefault(find(a), []).append(a)
    return sorted(groups.values(), key=lambda g: g[0])


def test_components_match_union_find_on_random_graphs():
    rng = random.Random(1234)
    for _ in range(1000):
        n = rng.randint(1, 50)
        m = rng.randint(0, 2 * n)
        edges = [(rng.randrange(n), rng.randrange(n)) for _ in range(m)]
        edges = [(i, j) for i, j in edges if i != j]
        got = component_sets(n, [Bond(i, j, 1.0) for i, j in edges])
        assert [list(c) for c in got] == _union_find(n, edges)
        flat = sorted(a for c in got for a in c)
        assert flat == list(range(n))
