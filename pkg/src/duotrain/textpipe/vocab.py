"""Input-side token vocabularies (phonemes or characters)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .lexicon import WORD_MARK, Lexicon, spoken_form, normalize_word

PAD, UNK, EOS, NOISE = "<pad>", "<unk>", "<eos>", "<NOISE>"
SPECIALS = (PAD, UNK, EOS, NOISE)
PAD_ID, UNK_ID, EOS_ID, NOISE_ID = range(4)


@dataclass(frozen=True)
class PhonemeVocab:
    tokens: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens):
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls(tuple(Path(path).read_text(encoding="utf-8").splitlines()))


@dataclass
class PhonemeSequence:
    """Token ids of one spoken-form sentence; ``oov`` counts spelled-out words."""

    tokens: list[int]
    oov: int = 0

    def __len__(self):
        return len(self.tokens)


def build_phoneme_vocab(lexicon: Lexicon, marking: bool = True) -> PhonemeVocab:
    phones = lexicon.phonemes()
    if marking:
        phones |= {WORD_MARK + p for p in phones}
    return PhonemeVocab(SPECIALS + tuple(sorted(phones)))


def phonemize(sentence: str, lexicon: Lexicon, vocab: PhonemeVocab) -> PhonemeSequence:
    phones, oov = spoken_form(sentence, lexicon)
    return PhonemeSequence(vocab.encode(phones), oov)


# Character input is the ablation alternative to phonemes: same word-start mark,
# letters instead of phonemes.

def spelled_form(sentence: str) -> list[str]:
    out = []
    for word in sentence.split():
        w = normalize_word(word)
        if not w:
            continue
        out.append(WORD_MARK + w[0])
        out.extend(w[1:])
    if not out:
        raise ValueError(f"no characters to encode in {sentence!r}")
    return out


def build_char_vocab(sentences) -> PhonemeVocab:
    chars = set()
    for s in sentences:
        for w in s.split():
            chars.update(normalize_word(w))
    chars |= {WORD_MARK + c for c in chars}
    return PhonemeVocab(SPECIALS + tuple(sorted(chars)))


def characterize(sentence: str, vocab: PhonemeVocab) -> PhonemeSequence:
    return PhonemeSequence(vocab.encode(spelled_form(sentence)))
