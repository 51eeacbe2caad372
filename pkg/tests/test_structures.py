import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regional_oc.errors import InvalidWord
from regional_oc.geometry import RegionLabel
from regional_oc.structures import StructureWord, enumerate_words, validate

R1, H, R2 = RegionLabel.R1, RegionLabel.H, RegionLabel.R2


def _words(*texts):
    return [StructureWord.parse(t) for t in texts]


def _exhaustive(start, end, k):
    out = []
    for n in range(1, k + 1):
        for w in itertools.product((R1, H, R2), repeat=n):
            if validate(StructureWord(w), start, end) is None:
                out.append(StructureWord(w))
    return out


def test_enumeration_examples():
    assert enumerate_words(R1, R2, 3) == _words("1-2", "1-H-2")
    four = enumerate_words(R1, R2, 4)
    assert len(four) == 5
    assert set(four) - set(enumerate_words(R1, R2, 3)) == set(_words("1-2-1-2", "1-H-1-2", "1-2-H-2"))
    assert enumerate_words(R1, R1, 1) == _words("1")


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6])
@pytest.mark.parametrize("start,end", [(R1, R2), (R1, R1), (H, R2), (R2, H)])
def test_enumeration_matches_exhaustive_generation(start, end, k):
    got = enumerate_words(start, end, k)
    assert sorted(got, key=StructureWord.sort_key) == got
    assert len(set(got)) == len(got)
    assert set(got) == set(_exhaustive(start, end, k))


def test_validate_examples():
    assert validate(StructureWord.parse("1-1-2")) == "consecutive repeat at index 0"
    assert validate(StructureWord.parse("1-H-2"), R1, R2) is None
    assert validate(StructureWord.parse("H-1"), R1, R1) == "first label mismatch"
    assert validate(StructureWord.parse("1-H"), R1, R2) == "last label mismatch"


def test_word_text():
    w = StructureWord.parse("1-H-2")
    assert str(w) == "1-H-2"
    assert len(w) == 3 and w.n_junctions == 2
    with pytest.raises(InvalidWord):
        StructureWord.parse("1-3")


_lab = st.sampled_from([R1, H, R2])


@settings(max_examples=50, deadline=None)
@given(_lab, _lab, st.integers(1, 6))
def test_enumeration_properties(s, e, k):
    words = enumerate_words(s, e, k)
    assert all(validate(w, s, e) is None for w in words)
    assert len(words) >= len(enumerate_words(s, e, max(1, k - 1)))
    for j in range(1, k):
        shorter = enumerate_words(s, e, j)
        assert [w for w in words if len(w) <= j] == shorter
