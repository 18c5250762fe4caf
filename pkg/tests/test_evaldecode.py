import math
import random

import numpy as np
import pytest
import sacrebleu
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcases import TINY
from duotrain.evaldecode import (
    align_words,
    beam_search,
    beam_search_core,
    bleu,
    corpus_wer,
    exhaustive_search,
    model_step_fn,
    normalize_for_wer,
    tokenize_13a,
    wer,
)
from duotrain.model import ModelConfig, build_model, encode_speech
from duotrain.numcore import no_grad

BOS, EOS = 0, 1


def toy_model(seed, vocab):
    """Deterministic next-token log-probs keyed on the prefix; bos is never emitted."""

    def step(prefixes):
        rows = []
        for p in prefixes:
            r = np.random.default_rng([seed, *p])
            z = r.standard_normal(vocab) * 2.0
            z[BOS] = -np.inf
            z = z - np.log(np.exp(z[1:] - z[1:].max()).sum()) - z[1:].max()
            rows.append(z)
        return np.array(rows)

    return step


def _norm(h):
    return h.score / len(h.tokens)


# -- beam search on toy models ---------------------------------------------------


def test_hand_three_token_model():
    table = {(0,): [-np.inf, math.log(0.4), math.log(0.6)], (0, 2): [-np.inf, math.log(0.1), math.log(0.9)]}

    def step(prefixes):
        return np.array([table[tuple(p)] for p in prefixes])

    greedy = beam_search_core(step, BOS, EOS, 1, 2)
    assert greedy.tokens == [2, 1]
    assert greedy.score == pytest.approx(math.log(0.6) + math.log(0.1))
    best = beam_search_core(step, BOS, EOS, 2, 2)
    assert best.tokens == [1] and best.score == pytest.approx(math.log(0.4))
    assert exhaustive_search(step, BOS, EOS, 3, 2).tokens == [1]


@pytest.mark.parametrize("seed", range(50))
def test_wide_beam_matches_exhaustive(seed):
    r = random.Random(seed)
    vocab, max_len = r.randint(3, 5), r.randint(1, 4)
    step = toy_model(seed, vocab)
    full = beam_search_core(step, BOS, EOS, vocab**max_len, max_len)
    ref = exhaustive_search(step, BOS, EOS, vocab, max_len)
    assert full.tokens == ref.tokens
    assert _norm(full) == pytest.approx(_norm(ref), abs=1e-12)


def test_beam_one_is_greedy_on_toys():
    for seed in range(30):
        step = toy_model(seed, 5)
        prefix = [BOS]
        for _ in range(6):
            w = int(np.argmax(step([prefix])[0] if len(prefix) < 6 else np.eye(5)[EOS]))
            prefix.append(w)
            if w == EOS:
                break
        assert beam_search_core(step, BOS, EOS, 1, 6).tokens == prefix[1:]


def test_larger_beam_rarely_worse():
    ok = total = 0
    for seed in range(200):
        step = toy_model(seed, 5)
        a = beam_search_core(step, BOS, EOS, 2, 5)
        b = beam_search_core(step, BOS, EOS, 5, 5)
        total += 1
        ok += _norm(b) >= _norm(a) - 1e-12
    assert ok / total >= 0.95


def test_beam_validation():
    with pytest.raises(ValueError):
        beam_search_core(toy_model(0, 4), BOS, EOS, 0, 3)
    with pytest.raises(ValueError):
        beam_search_core(toy_model(0, 4), BOS, EOS, 2, 0)


# -- beam search on the real decoder --------------------------------------------------


@pytest.fixture(scope="module")
def tiny_model():
    return build_model(ModelConfig(**TINY), seed=2)


def test_model_beam_one_equals_greedy(tiny_model):
    feats = np.random.default_rng(0).standard_normal((20, 6)).astype(np.float32)
    hyp = beam_search(tiny_model, feats, beam=1)
    with no_grad():
        mem, ml = encode_speech(tiny_model, feats[None], [20])
    step = model_step_fn(tiny_model, mem, ml)
    prefix, max_len = [2], int(ml[0]) + 10
    score = 0.0
    for t in range(max_len):
        lp = step([prefix])[0]
        w = 3 if t == max_len - 1 else int(np.argmax(lp))
        score += lp[w]
        prefix.append(w)
        if w == 3:
            break
    assert hyp.tokens == prefix[1:]
    assert hyp.score == pytest.approx(score, rel=1e-9)


def test_model_decoding_deterministic(tiny_model):
    feats = np.random.default_rng(1).standard_normal((16, 6))
    a, b = beam_search(tiny_model, feats, beam=3), beam_search(tiny_model, feats, beam=3)
    assert a.tokens == b.tokens and a.score == b.score
    assert a.tokens[-1] == 3 and 0 not in a.tokens and 2 not in a.tokens[:-1]
    with pytest.raises(ValueError):
        beam_search(tiny_model, feats, beam=0)


# -- WER ----------------------------------------------------------------------------------


def test_wer_examples():
    w = wer("it's delightful", "its delightful")
    assert (w.substitutions, w.deletions, w.insertions, w.reference_words) == (1, 0, 0, 2)
    assert w.wer == 0.5
    w = wer("a b c", "a c")
    assert (w.substitutions, w.deletions, w.insertions) == (0, 1, 0)
    assert wer("A, b.", "a b").wer == 0.0
    assert wer("A, b.", "a b", normalize=False).wer == 1.0


def test_wer_normalization_keeps_apostrophes():
    assert normalize_for_wer("Don't STOP!  now") == ["don't", "stop", "now"]


def test_wer_empty_reference():
    with pytest.raises(ValueError):
        wer("  ", "a")
    with pytest.raises(ValueError):
        corpus_wer([], [])
    with pytest.raises(ValueError):
        corpus_wer(["a"], [])


def _edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def test_alignment_cost_matches_dp_oracle():
    r = random.Random(0)
    for _ in range(100):
        ref = [r.choice("abcd") for _ in range(r.randint(1, 9))]
        hyp = [r.choice("abcd") for _ in range(r.randint(0, 9))]
        s, d, i = align_words(ref, hyp)
        assert s + d + i == _edit_distance(ref, hyp)
        assert len(ref) - d + i == len(hyp)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=8), st.lists(st.sampled_from("abc"), min_size=1, max_size=8))
def test_swapping_sides_exchanges_deletions_and_insertions(a, b):
    s1, d1, i1 = align_words(a, b)
    s2, d2, i2 = align_words(b, a)
    assert s1 + d1 + i1 == s2 + d2 + i2
    assert d1 - i1 == i2 - d2


def test_corpus_wer_pools_counts():
    total = corpus_wer(["a b c", "d e"], ["a c", "d e f"])
    assert (total.deletions, total.insertions, total.reference_words) == (1, 1, 5)
    assert total.wer == pytest.approx(2 / 5)


# -- BLEU ----------------------------------------------------------------------------------


WORDS = "the cat sat on a mat while dogs ran far away , . ! it's don't 3.5 well-known".split()


def _fixture(seed=0, n=20):
    r = random.Random(seed)
    refs, hyps = [], []
    for _ in range(n):
        ref = [r.choice(WORDS) for _ in range(r.randint(4, 14))]
        hyp = [w if r.random() < 0.7 else r.choice(WORDS) for w in ref]
        if r.random() < 0.3:
            del hyp[r.randrange(len(hyp))]
        refs.append(" ".join(ref))
        hyps.append(" ".join(hyp))
    return refs, hyps


@pytest.mark.parametrize("seed", range(5))
def test_bleu_matches_sacrebleu(seed):
    refs, hyps = _fixture(seed)
    ours = bleu(refs, hyps)
    ref = sacrebleu.corpus_bleu(hyps, [refs])
    assert abs(ours.score - ref.score) <= 0.1
    assert (ours.hyp_len, ours.ref_len) == (ref.sys_len, ref.ref_len)


def test_tokenizer_splits_punctuation():
    assert tokenize_13a("Hello, world. It costs $3.50!") == ["Hello", ",", "world", ".", "It", "costs", "$", "3.50", "!"]


def test_bleu_identity_and_disjoint():
    refs, _ = _fixture(1)
    assert bleu(refs, refs).score == pytest.approx(100.0)
    hyps = ["w x y z q"] * len(refs)
    res = bleu(refs, hyps)
    assert res.matches == [0, 0, 0, 0] and res.score == 0.0
    assert res.score == pytest.approx(sacrebleu.corpus_bleu(hyps, [refs]).score, abs=0.1)


def test_bleu_zero_fourgram_overlap_is_small():
    # reversed word order: every unigram matches, no longer n-gram does
    refs = ["the cat sat on the mat today", "a dog ran far away from home", "it rained all day in the city",
            "we ate bread and cheese at noon", "birds sing loudly every single morning"]
    hyps = [" ".join(reversed(r.split())) for r in refs]
    res = bleu(refs, hyps)
    assert res.matches[3] == 0
    assert res.matches[1:] == [0, 0, 0]
    assert 0 < res.score < 5
    assert res.score == pytest.approx(sacrebleu.corpus_bleu(hyps, [refs]).score, abs=0.1)


def test_bleu_invariances():
    refs, hyps = _fixture(2)
    base = bleu(refs, hyps).score
    assert bleu(refs * 2, hyps * 2).score == pytest.approx(base, abs=1e-9)
    order = list(range(len(refs)))
    random.Random(3).shuffle(order)
    assert bleu([refs[i] for i in order], [hyps[i] for i in order]).score == pytest.approx(base, abs=1e-9)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])
