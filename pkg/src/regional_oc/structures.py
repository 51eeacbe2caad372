"""Structure words: finite arc patterns such as ``1-H-2``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import InvalidWord
from .geometry import RegionLabel

DEFAULT_MAX_ARCS = 5


@dataclass(frozen=True, order=True)
class StructureWord:
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(RegionLabel.parse(l) for l in self.labels))
        if not self.labels:
            raise InvalidWord("a structure word has at least one arc")

    @classmethod
    def parse(cls, text: str | Iterable) -> "StructureWord":
        if isinstance(text, StructureWord):
            return text
        if isinstance(text, str):
            parts = [p.strip() for p in text.split("-")]
        else:
            parts = list(text)
        try:
            return cls(tuple(parts))
        except ValueError as exc:
            raise InvalidWord(str(exc)) from None

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[RegionLabel]:
        return iter(self.labels)

    def __getitem__(self, k) -> RegionLabel:
        return self.labels[k]

    def __str__(self) -> str:
        return "-".join(l.text for l in self.labels)

    @property
    def n_junctions(self) -> int:
        return len(self.labels) - 1

    def sort_key(self):
        return (len(self.labels), tuple(int(l) for l in self.labels))


def validate(word, start: RegionLabel | None = None, end: RegionLabel | None = None) -> str | None:
    """First invariant violation of ``word`` as text, or ``None`` if it is admissible.

    ``start``/``end`` are the classifications of x0 and xf; they are only
    checked when given.
    """
    if not isinstance(word, StructureWord):
        try:
            word = StructureWord.parse(word)
        except InvalidWord as exc:
            return str(exc)
    labels = word.labels
    for k in range(len(labels) - 1):
        if labels[k] == labels[k + 1]:
            return f"consecutive repeat at index {k}"
    if start is not None and labels[0] != RegionLabel.parse(start):
        return "first label mismatch"
    if end is not None and labels[-1] != RegionLabel.parse(end):
        return "last label mismatch"
    # with three labels and no repeats, H arcs are always flanked by regions
    return None


def enumerate_words(start, end, max_arcs: int = DEFAULT_MAX_ARCS) -> list[StructureWord]:
    """All admissible words from ``start`` to ``end`` with at most ``max_arcs`` arcs.

    Shorter words come first; equal lengths are ordered lexicographically
    with R1 < H < R2.
    """
    if max_arcs < 1:
        raise ValueError("max_arcs must be at least 1")
    start, end = RegionLabel.parse(start), RegionLabel.parse(end)
    order = sorted(RegionLabel)
    out = []
    frontier = [(start,)]
    for length in range(1, max_arcs + 1):
        out.extend(StructureWord(w) for w in frontier if w[-1] == end)
        nxt = []
        for w in frontier:
            for lab in order:
                if lab != w[-1]:
                    nxt.append(w + (lab,))
        frontier = nxt
    return out
