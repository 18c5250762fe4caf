import numpy as np
import pytest

from duotrain.model import ModelConfig
from duotrain.synth import gen_synth
from duotrain.textpipe import build_phoneme_vocab, encode_subwords, learn_subwords, phonemize
from duotrain.trainer import SpeechExample, TextExample


class ToyData:
    """Synthetic speech + text examples with their vocabularies."""

    def __init__(self, seed=0, size=24, text_size=40, subword_size=60, n_words=20):
        corpus = gen_synth(seed, size, n_words=n_words, text_size=text_size)
        self.corpus = corpus
        self.lexicon = corpus.language.lexicon
        self.phonemes = build_phoneme_vocab(self.lexicon)
        sentences = [s for *_, s in corpus.utterances] + corpus.text
        self.subwords = learn_subwords(sentences, subword_size)
        self.speech = [
            SpeechExample(uid, feats, encode_subwords(s, self.subwords).tokens)
            for uid, feats, s in corpus.utterances
        ]
        self.text = [
            TextExample(phonemize(s, self.lexicon, self.phonemes).tokens, encode_subwords(s, self.subwords).tokens)
            for s in sentences
        ]

    def model_config(self, **kw):
        base = dict(
            embed_dim=16, ffn_dim=32, speech_layers=2, text_layers=1, decoder_layers=1, heads=2,
            phoneme_vocab_size=len(self.phonemes), subword_vocab_size=len(self.subwords),
        )
        base.update(kw)
        return ModelConfig(**base)


@pytest.fixture(scope="session")
def toy():
    return ToyData()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
