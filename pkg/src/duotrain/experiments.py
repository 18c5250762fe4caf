"""Toy-scale experiments on the synthetic corpus.

Both helpers return plain dicts so the demos and the acceptance suite can
print or compare them without caring about the training internals.
"""

from __future__ import annotations

import time

from .checkpoint import average_checkpoints
from .evaldecode import corpus_wer, decode_corpus
from .model import ModelConfig
from .synth import gen_synth, held_out_split
from .textpipe import build_phoneme_vocab, encode_subwords, learn_subwords, phonemize
from .trainer import SpeechExample, TaskMode, TextExample, TrainConfig, train


def small_model(phoneme_vocab, subword_vocab, share_mode="tie_top6"):
    return ModelConfig(
        embed_dim=64, ffn_dim=256, speech_layers=2, text_layers=2, decoder_layers=2, heads=4,
        phoneme_vocab_size=phoneme_vocab, subword_vocab_size=subword_vocab, share_mode=share_mode,
    )


def overfit_run(seed=0, size=200, n_words=30, epochs=30, subword_size=100, beam=5):
    """Train speech-only on a synthetic corpus and report WER on that same corpus."""
    start = time.time()
    corpus = gen_synth(seed, size, n_words=n_words)
    sentences = [s for *_, s in corpus.utterances]
    vocab = learn_subwords(sentences, subword_size)
    data = [SpeechExample(uid, f, encode_subwords(s, vocab).tokens) for uid, f, s in corpus.utterances]
    phonemes = build_phoneme_vocab(corpus.language.lexicon)
    cfg = TrainConfig(epochs=epochs, speech_batch_frames=300, warmup_steps=100, seed=seed)
    ckpts = train(cfg, TaskMode(text_task="none"), data, None, small_model(len(phonemes), len(vocab)))
    model = average_checkpoints(ckpts[-cfg.average_last:]).to_model()
    rows = decode_corpus(model, data, vocab, beam=beam)
    result = corpus_wer(sentences, [r[1] for r in rows])
    return {
        "seed": seed,
        "wer": result.wer,
        "breakdown": result.to_dict(),
        "first_loss": ckpts[0].metadata["train_loss"],
        "last_loss": ckpts[-1].metadata["train_loss"],
        "seconds": round(time.time() - start, 1),
    }


def held_out_run(seed, text_task="denoise", mask_ratio=0.2, epochs=300, share_mode="tie_top6",
                 subword_size=120, beam=5):
    """One model of the held-out-word experiment.

    The paired speech never contains the held-out words while the text-only
    corpus does, so the speech-only baseline can only reach them through the
    shared subword inventory. ``text_task="none"`` trains that baseline.
    """
    start = time.time()
    split = held_out_split(seed)
    lexicon = split.language.lexicon
    phonemes = build_phoneme_vocab(lexicon)
    vocab = learn_subwords([s for *_, s in split.paired] + split.text, subword_size)
    speech = [SpeechExample(uid, f, encode_subwords(s, vocab).tokens) for uid, f, s in split.paired]
    mode = TaskMode(text_task=text_task, mask_ratio=mask_ratio)
    text = None
    if mode.joint:
        text = [TextExample(phonemize(s, lexicon, phonemes).tokens, encode_subwords(s, vocab).tokens)
                for s in split.text]
    cfg = TrainConfig(epochs=epochs, speech_batch_frames=300, text_batch_tokens=150, warmup_steps=100, seed=seed)
    ckpts = train(cfg, mode, speech, text, small_model(len(phonemes), len(vocab), share_mode))
    model = average_checkpoints(ckpts[-cfg.average_last:]).to_model()
    rows = decode_corpus(model, [SpeechExample(uid, f, []) for uid, f, _ in split.test], vocab, beam=beam)
    hyp = {r[0]: r[1] for r in rows}
    subset = split.test_subset()
    full = corpus_wer([s for *_, s in split.test], [hyp[uid] for uid, *_ in split.test])
    held = corpus_wer([s for *_, s in subset], [hyp[uid] for uid, *_ in subset])
    return {
        "seed": seed,
        "text_task": text_task,
        "mask_ratio": mask_ratio if mode.joint else None,
        "wer": full.wer,
        "held_out_wer": held.wer,
        "seconds": round(time.time() - start, 1),
    }
