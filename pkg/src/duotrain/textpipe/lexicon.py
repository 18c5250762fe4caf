"""Pronouncing-dictionary parsing and dictionary-based grapheme-to-phoneme lookup."""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

BASE_PHONEMES = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P",
    "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)
VALID_PHONEMES = frozenset(p + s for p in BASE_PHONEMES for s in ("", "0", "1", "2"))

# Letter names as listed in CMUdict; used to spell out unknown words.
LETTER_NAMES = {
    "A": ("EY1",), "B": ("B", "IY1"), "C": ("S", "IY1"), "D": ("D", "IY1"),
    "E": ("IY1",), "F": ("EH1", "F"), "G": ("JH", "IY1"), "H": ("EY1", "CH"),
    "I": ("AY1",), "J": ("JH", "EY1"), "K": ("K", "EY1"), "L": ("EH1", "L"),
    "M": ("EH1", "M"), "N": ("EH1", "N"), "O": ("OW1",), "P": ("P", "IY1"),
    "Q": ("K", "Y", "UW1"), "R": ("AA1", "R"), "S": ("EH1", "S"), "T": ("T", "IY1"),
    "U": ("Y", "UW1"), "V": ("V", "IY1"), "W": ("D", "AH1", "B", "AH0", "L", "Y", "UW0"),
    "X": ("EH1", "K", "S"), "Y": ("W", "AY1"), "Z": ("Z", "IY1"),
}

WORD_MARK = "_"
_ALT = re.compile(r"^(.+)\((\d+)\)$")
_STRIP = re.compile(r"[^\w']", re.UNICODE)


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class Lexicon:
    """Uppercase word -> tuple of pronunciations (each a tuple of phonemes)."""

    entries: Mapping[str, tuple[tuple[str, ...], ...]]

    def __post_init__(self):
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def __contains__(self, word):
        return word in self.entries

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, word):
        return self.entries[word]

    def __eq__(self, other):
        return isinstance(other, Lexicon) and dict(self.entries) == dict(other.entries)

    def phonemes(self):
        return {p for prons in self.entries.values() for pron in prons for p in pron}


def parse_lexicon(text: str | Iterable[str]) -> Lexicon:
    """Parse CMU-dictionary formatted text.

    Accepts ``WORD  PH1 PH2`` lines, ``WORD(2)`` alternates, ``;;;`` comment
    lines and trailing ``# ...`` comments.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    entries: dict[str, list[tuple[str, ...]]] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";;;"):
            continue
        word, *phones = line.split()
        if not phones:
            raise LexiconError(f"line {lineno}: empty pronunciation for {word!r}")
        bad = [p for p in phones if p not in VALID_PHONEMES]
        if bad:
            raise LexiconError(f"line {lineno}: unknown phoneme {bad[0]!r}")
        m = _ALT.match(word)
        if m:
            word = m.group(1)
        entries.setdefault(word.upper(), []).append(tuple(phones))
    return Lexicon({w: tuple(p) for w, p in entries.items()})


def serialize_lexicon(lexicon: Lexicon) -> str:
    out = []
    for word in sorted(lexicon.entries):
        for i, pron in enumerate(lexicon.entries[word]):
            key = word if i == 0 else f"{word}({i + 1})"
            out.append(f"{key}  {' '.join(pron)}")
    return "\n".join(out) + ("\n" if out else "")


@functools.lru_cache(maxsize=1)
def load_cmudict() -> Lexicon:
    """The full CMU Pronouncing Dictionary shipped with the ``cmudict`` package."""
    import cmudict

    return parse_lexicon(cmudict.dict_string().splitlines())


def normalize_word(word: str) -> str:
    """Uppercase and drop punctuation other than apostrophes."""
    return _STRIP.sub("", word.upper()).replace("_", "")


def lookup(word: str, lexicon: Lexicon):
    """Return (phonemes, is_oov) for one raw word, or (None, True) if unmappable."""
    w = normalize_word(word)
    for key in (w, w.strip("'")):
        if key and key in lexicon.entries:
            return list(lexicon.entries[key][0]), False
    letters = [c for c in w if c in LETTER_NAMES]
    if not letters:
        return None, True
    return [p for c in letters for p in LETTER_NAMES[c]], True


def spoken_form(sentence: str, lexicon: Lexicon) -> tuple[list[str], int]:
    """Phoneme strings for ``sentence`` with word-initial marks, plus the OOV count.

    Raises ValueError for an empty sentence or one where no word maps.
    """
    words = sentence.split()
    if not words:
        raise ValueError("empty sentence")
    out: list[str] = []
    oov = 0
    for word in words:
        phones, missing = lookup(word, lexicon)
        oov += missing
        if phones is None:
            continue
        out.append(WORD_MARK + phones[0])
        out.extend(phones[1:])
    if not out:
        raise ValueError(f"no word of {sentence!r} could be mapped to phonemes")
    return out, oov
