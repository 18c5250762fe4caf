"""Byte-pair-style subword vocabulary for decoder targets.

Text is rendered with a word-start symbol (``WORD_START``) in place of each
space plus one leading symbol, so ``"It's delightful"`` becomes
``"▁It's▁delightful"``. Merges never cross a word start.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

WORD_START = "▁"
PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)
UNK_GLYPH = "⁇"


def _chunks(text: str) -> list[str]:
    marked = WORD_START + text.replace(" ", WORD_START)
    out, cur = [], ""
    for ch in marked:
        if ch == WORD_START and cur:
            out.append(cur)
            cur = ""
        cur += ch
    if cur:
        out.append(cur)
    return out


@dataclass(frozen=True)
class SubwordVocab:
    tokens: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    index: dict = field(init=False, repr=False, compare=False)
    ranks: dict = field(init=False, repr=False, compare=False)
    _cache: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError(f"subword vocabulary must start with {SPECIALS}")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "merges", tuple(tuple(m) for m in self.merges))
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})
        object.__setattr__(self, "ranks", {m: i for i, m in enumerate(self.merges)})
        object.__setattr__(self, "_cache", {})

    def __len__(self):
        return len(self.tokens)

    def segment_word(self, chunk: str) -> tuple[str, ...]:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        symbols = list(chunk)
        while len(symbols) > 1:
            best = min(
                ((self.ranks.get(p, len(self.ranks)), p) for p in zip(symbols, symbols[1:])),
            )
            if best[0] == len(self.ranks):
                break
            left, right = best[1]
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        result = tuple(symbols)
        self._cache[chunk] = result
        return result

    def segment(self, text: str) -> list[str]:
        if not text:
            return []
        return [s for chunk in _chunks(text) for s in self.segment_word(chunk)]

    def save(self, vocab_path, merges_path):
        Path(vocab_path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")
        Path(merges_path).write_text(
            "".join(f"{a} {b}\n" for a, b in self.merges), encoding="utf-8"
        )

    @classmethod
    def load(cls, vocab_path, merges_path):
        tokens = Path(vocab_path).read_text(encoding="utf-8").split("\n")[:-1]
        merges = [
            tuple(line.split(" "))
            for line in Path(merges_path).read_text(encoding="utf-8").split("\n")
            if line
        ]
        return cls(tuple(tokens), tuple(merges))


@dataclass
class SubwordSequence:
    tokens: list[int]

    def __len__(self):
        return len(self.tokens)

    @property
    def has_unk(self):
        return UNK_ID in self.tokens


def learn_subwords(corpus, target_size: int) -> SubwordVocab:
    """Greedy pair merging until the vocabulary holds ``target_size`` tokens.

    ``corpus`` is a string (split on newlines) or an iterable of lines. Ties
    between equally frequent pairs go to the lexicographically smallest pair.
    """
    lines = corpus.splitlines() if isinstance(corpus, str) else list(corpus)
    freq = Counter(c for line in lines if line for c in _chunks(line))
    if not freq:
        raise ValueError("empty corpus")
    chars = sorted({ch for c in freq for ch in c})
    minimum = len(SPECIALS) + len(chars)
    if target_size < minimum:
        raise ValueError(f"target_size {target_size} too small; minimum is {minimum}")

    words = [list(c) for c in freq]
    counts = list(freq.values())
    pair_counts: Counter = Counter()
    where = defaultdict(set)
    for wi, syms in enumerate(words):
        for p in zip(syms, syms[1:]):
            pair_counts[p] += counts[wi]
            where[p].add(wi)

    tokens = list(SPECIALS) + chars
    known = set(tokens)
    merges = []
    while len(tokens) < target_size:
        live = [(-n, p) for p, n in pair_counts.items() if n > 0]
        if not live:
            raise ValueError(
                f"corpus supports at most {len(tokens)} tokens, requested {target_size}"
            )
        _, best = min(live)
        left, right = best
        new = left + right
        merges.append(best)
        if new not in known:
            known.add(new)
            tokens.append(new)
        for wi in list(where.pop(best, ())):
            syms = words[wi]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= counts[wi]
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                    out.append(new)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[wi] = out
            for p in zip(out, out[1:]):
                pair_counts[p] += counts[wi]
                where[p].add(wi)
        pair_counts.pop(best, None)
    return SubwordVocab(tuple(tokens), tuple(merges))


def encode_subwords(text: str, vocab: SubwordVocab) -> SubwordSequence:
    return SubwordSequence([vocab.index.get(s, UNK_ID) for s in vocab.segment(text)])


def decode_subwords(seq, vocab: SubwordVocab) -> str:
    ids = seq.tokens if isinstance(seq, SubwordSequence) else seq
    pieces = []
    for i in ids:
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        pieces.append(UNK_GLYPH if i == UNK_ID else vocab.tokens[i])
    text = "".join(pieces)
    if text.startswith(WORD_START):
        text = text[1:]
    return text.replace(WORD_START, " ")
