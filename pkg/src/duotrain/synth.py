"""Synthetic toy language with pseudo-speech, for desk-scale experiments.

Words are short random phoneme strings over a small inventory; sentences
come from a sparse first-order word chain, so the next word is fairly
predictable from the previous one. Speech for a sentence is 4 frames per
phoneme of that phoneme's fixed 80-d template plus Gaussian noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audiofeat import save_features
from .textpipe.lexicon import Lexicon, serialize_lexicon

FRAMES_PER_PHONEME = 4
FEATURE_DIM = 80
NOISE_STD = 0.1

# phoneme -> spelling; spellings are unambiguous left to right
INVENTORY = {
    "B": "b", "D": "d", "G": "g", "K": "k", "L": "l", "M": "m", "N": "n",
    "P": "p", "S": "s", "T": "t", "V": "v", "Z": "z",
    "AA1": "a", "IY1": "i", "UW1": "u", "EH1": "e", "OW1": "o",
}
CONSONANTS = [p for p in INVENTORY if not p[-1].isdigit()]
VOWELS = [p for p in INVENTORY if p[-1].isdigit()]
MANIFEST_COLUMNS = ("id", "audio", "n_frames", "transcript", "translation")


def phoneme_templates(dim=FEATURE_DIM):
    """Fixed pattern per inventory phoneme: a unit band of width 4 plus a weak ramp."""
    out = {}
    width = dim // len(INVENTORY)
    for k, p in enumerate(INVENTORY):
        t = np.zeros(dim)
        t[k * width:(k + 1) * width] = 1.0
        t += 0.2 * np.cos(np.arange(dim) * (k + 1) * np.pi / dim)
        out[p] = t
    return out


@dataclass
class SynthLanguage:
    words: list[str]
    pronunciations: dict  # word -> list of phonemes
    successors: dict  # word -> list of words
    starts: list[str]

    @property
    def lexicon(self):
        return Lexicon({w.upper(): (tuple(p),) for w, p in self.pronunciations.items()})


def make_language(seed, n_words=30, branching=3):
    if not 1 <= n_words <= 50:
        raise ValueError("the toy lexicon holds between 1 and 50 words")
    rng = np.random.default_rng(seed)
    prons = {}
    while len(prons) < n_words:
        n_syl = int(rng.integers(1, 3))
        phones = []
        for _ in range(n_syl):
            phones.append(CONSONANTS[rng.integers(len(CONSONANTS))])
            phones.append(VOWELS[rng.integers(len(VOWELS))])
        if rng.random() < 0.5:
            phones.append(CONSONANTS[rng.integers(len(CONSONANTS))])
        if len(phones) < 3:
            continue
        word = "".join(INVENTORY[p] for p in phones)
        prons.setdefault(word, phones)
    words = list(prons)
    successors = {
        w: [words[j] for j in rng.choice(len(words), size=min(branching, len(words)), replace=False)]
        for w in words
    }
    starts = [words[j] for j in rng.choice(len(words), size=min(len(words), max(3, len(words) // 3)), replace=False)]
    return SynthLanguage(words, prons, successors, starts)


def sample_sentence(lang: SynthLanguage, rng, min_words=3, max_words=6, banned=frozenset(), required=None,
                    tries=1000):
    """Random walk on the word chain; optionally avoiding or requiring words."""
    for _ in range(tries):
        n = int(rng.integers(min_words, max_words + 1))
        w = lang.starts[rng.integers(len(lang.starts))]
        out = [w]
        while len(out) < n:
            succ = lang.successors[out[-1]]
            out.append(succ[rng.integers(len(succ))])
        if banned.intersection(out):
            continue
        if required is not None and not required.intersection(out):
            continue
        return " ".join(out)
    raise RuntimeError("could not sample a sentence under the given constraints")


def sentence_phonemes(lang: SynthLanguage, sentence):
    return [p for w in sentence.split() for p in lang.pronunciations[w]]


def render_speech(lang: SynthLanguage, sentence, rng, templates=None):
    templates = templates or phoneme_templates()
    phones = sentence_phonemes(lang, sentence)
    frames = np.repeat(np.stack([templates[p] for p in phones]), FRAMES_PER_PHONEME, axis=0)
    return (frames + NOISE_STD * rng.standard_normal(frames.shape)).astype(np.float32)


@dataclass
class SynthCorpus:
    language: SynthLanguage
    utterances: list = field(default_factory=list)  # (id, features, transcript)
    text: list = field(default_factory=list)  # text-only sentences


def gen_synth(seed, size, out_dir=None, n_words=30, text_size=0):
    """Toy lexicon, ``size`` pseudo-speech utterances and ``text_size`` text-only sentences.

    When ``out_dir`` is given, writes ``lexicon.txt`` (CMU format),
    ``manifest.tsv`` with one ``feats/<id>.feat`` cache per utterance, and
    ``text.txt`` holding the transcripts followed by the text-only sentences.
    """
    lang = make_language(seed, n_words)
    rng = np.random.default_rng([seed, 1])
    templates = phoneme_templates()
    corpus = SynthCorpus(lang)
    for i in range(size):
        sent = sample_sentence(lang, rng)
        corpus.utterances.append((f"utt{i:05d}", render_speech(lang, sent, rng, templates), sent))
    corpus.text = [sample_sentence(lang, rng) for _ in range(text_size)]
    if out_dir is not None:
        write_corpus(corpus, out_dir)
    return corpus


def write_corpus(corpus: SynthCorpus, out_dir):
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    (out / "lexicon.txt").write_text(serialize_lexicon(corpus.language.lexicon), encoding="utf-8")
    with open(out / "manifest.tsv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for uid, feats, sent in corpus.utterances:
            rel = f"feats/{uid}.feat"
            save_features(out / rel, feats)
            w.writerow((uid, rel, len(feats), sent, ""))
    lines = [s for _, _, s in corpus.utterances] + list(corpus.text)
    (out / "text.txt").write_text("".join(s + "\n" for s in lines), encoding="utf-8")


@dataclass
class HeldOutSplit:
    """Paired data avoiding ``held_out`` words, text data using them, and a test set."""

    language: SynthLanguage
    held_out: list
    paired: list  # (id, features, transcript)
    text: list
    test: list  # (id, features, transcript)

    def test_subset(self):
        held = set(self.held_out)
        return [u for u in self.test if held.intersection(u[2].split())]


def held_out_split(seed, n_paired=50, n_text=1000, n_held_out=10, n_words=40, n_test=40,
                   test_held_out_fraction=0.5):
    lang = make_language(seed, n_words)
    rng = np.random.default_rng([seed, 2])
    templates = phoneme_templates()
    starts = set(lang.starts)
    candidates = [w for w in lang.words if w not in starts]
    held = [candidates[j] for j in rng.choice(len(candidates), size=n_held_out, replace=False)]
    banned = frozenset(held)
    paired = []
    for i in range(n_paired):
        s = sample_sentence(lang, rng, banned=banned)
        paired.append((f"pair{i:04d}", render_speech(lang, s, rng, templates), s))
    text = [sample_sentence(lang, rng) for _ in range(n_text)]
    test = []
    n_with = int(round(n_test * test_held_out_fraction))
    for i in range(n_test):
        if i < n_with:
            s = sample_sentence(lang, rng, required=banned)
        else:
            s = sample_sentence(lang, rng, banned=banned)
        test.append((f"test{i:04d}", render_speech(lang, s, rng, templates), s))
    return HeldOutSplit(lang, held, paired, text, test)
