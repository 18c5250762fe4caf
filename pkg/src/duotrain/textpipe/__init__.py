"""Text side of the pipeline: G2P lookup, phoneme/char vocabularies, subwords, noising."""

from .lexicon import (
    BASE_PHONEMES,
    LETTER_NAMES,
    Lexicon,
    LexiconError,
    load_cmudict,
    parse_lexicon,
    serialize_lexicon,
    spoken_form,
)
from .noise import apply_noise, mask_count
from .subwords import (
    SubwordSequence,
    SubwordVocab,
    WORD_START,
    decode_subwords,
    encode_subwords,
    learn_subwords,
)
from .vocab import (
    NOISE_ID,
    PhonemeSequence,
    PhonemeVocab,
    build_char_vocab,
    build_phoneme_vocab,
    characterize,
    phonemize,
    spelled_form,
)

__all__ = [
    "BASE_PHONEMES",
    "LETTER_NAMES",
    "Lexicon",
    "LexiconError",
    "NOISE_ID",
    "PhonemeSequence",
    "PhonemeVocab",
    "SubwordSequence",
    "SubwordVocab",
    "WORD_START",
    "apply_noise",
    "build_char_vocab",
    "build_phoneme_vocab",
    "characterize",
    "decode_subwords",
    "encode_subwords",
    "learn_subwords",
    "load_cmudict",
    "mask_count",
    "parse_lexicon",
    "phonemize",
    "serialize_lexicon",
    "spelled_form",
    "spoken_form",
]
